import { describe, expect, it } from 'vitest'
import { buildPayload, freshForm, isSubmittable, missingFields } from '../src/answerForm.js'
import type { Box } from '../src/api.js'

const box: Box = [112, 112, 80, 80]

describe('answer payloads', () => {
  it('kind 1 sends the kind and nothing else', () => {
    const payload = buildPayload({ ...freshForm(), kind: 1 })
    expect(payload).toEqual({ kind: 1 })
    expect(Object.keys(payload)).toEqual(['kind'])
  })

  it('kind 2 sends exactly kind and bbox', () => {
    const payload = buildPayload({ ...freshForm(), kind: 2, box })
    expect(Object.keys(payload).sort()).toEqual(['bbox', 'kind'])
    expect(payload.bbox).toEqual(box)
  })

  it('kind 3 sends bbox, template and the flipped flag', () => {
    const payload = buildPayload({
      ...freshForm(),
      kind: 3,
      box,
      templateId: 'TB',
      flipped: true,
    })
    expect(Object.keys(payload).sort()).toEqual(['bbox', 'flipped', 'kind', 'template_id'])
    expect(payload.template_id).toBe('TB')
    expect(payload.flipped).toBe(true)
  })

  it('kind 4 sends bbox and an optional name', () => {
    const anonymous = buildPayload({ ...freshForm(), kind: 4, box })
    expect(Object.keys(anonymous).sort()).toEqual(['bbox', 'kind'])
    const named = buildPayload({ ...freshForm(), kind: 4, box, newTemplate: ' TB ' })
    expect(named.new_template).toBe('TB')
  })

  it('kind 5 sends the kind alone', () => {
    expect(buildPayload({ ...freshForm(), kind: 5 })).toEqual({ kind: 5 })
  })
})

describe('validation', () => {
  it.each([2, 3, 4])('kind %i requires a drawn box', (kind) => {
    const form = { ...freshForm(), kind, templateId: 'TA' }
    expect(isSubmittable(form)).toBe(false)
    expect(missingFields(form)).toContain('box')
    expect(() => buildPayload(form)).toThrow(/missing/)
  })

  it('kind 3 also requires a template choice', () => {
    const form = { ...freshForm(), kind: 3, box }
    expect(missingFields(form)).toEqual(['template'])
  })

  it('kinds 1 and 5 are always submittable', () => {
    expect(isSubmittable({ ...freshForm(), kind: 1 })).toBe(true)
    expect(isSubmittable({ ...freshForm(), kind: 5 })).toBe(true)
  })
})
