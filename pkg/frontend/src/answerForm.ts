// Answer assembly and validation. The payload carries exactly the keys the
// selected kind requires; nothing else is ever sent.

import type { AnswerPayload, Box } from './api.js'

export interface FormState {
  kind: number
  box: Box | null
  templateId: string | null
  flipped: boolean
  newTemplate: string
}

export const ANSWER_KINDS: { kind: number; label: string; needsBox: boolean }[] = [
  { kind: 1, label: 'detection is correct', needsBox: false },
  { kind: 2, label: 'right template, wrong box', needsBox: true },
  { kind: 3, label: 'wrong template and box', needsBox: true },
  { kind: 4, label: 'a new template', needsBox: true },
  { kind: 5, label: 'part not in this image', needsBox: false },
]

export function missingFields(state: FormState): string[] {
  const missing: string[] = []
  if (state.kind < 1 || state.kind > 5) missing.push('kind')
  if ([2, 3, 4].includes(state.kind) && state.box === null) missing.push('box')
  if (state.kind === 3 && !state.templateId) missing.push('template')
  return missing
}

export function isSubmittable(state: FormState): boolean {
  return missingFields(state).length === 0
}

export function buildPayload(state: FormState): AnswerPayload {
  const missing = missingFields(state)
  if (missing.length) throw new Error(`incomplete answer: missing ${missing.join(', ')}`)
  switch (state.kind) {
    case 1:
      return { kind: 1 }
    case 2:
      return { kind: 2, bbox: state.box! }
    case 3:
      return {
        kind: 3,
        bbox: state.box!,
        template_id: state.templateId!,
        flipped: state.flipped,
      }
    case 4: {
      const payload: AnswerPayload = { kind: 4, bbox: state.box! }
      if (state.newTemplate.trim()) payload.new_template = state.newTemplate.trim()
      return payload
    }
    default:
      return { kind: 5 }
  }
}

export function freshForm(): FormState {
  return { kind: 1, box: null, templateId: null, flipped: false, newTemplate: '' }
}
