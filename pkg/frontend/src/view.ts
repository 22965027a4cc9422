// DOM skeleton and rendering helpers. The app mounts into a bare container
// so tests can build the exact same structure in a DOM emulator.

import { ANSWER_KINDS } from './answerForm.js'
import type { QuestionDoc, SessionState } from './api.js'

export interface AppElements {
  status: HTMLElement
  image: HTMLImageElement
  overlay: HTMLCanvasElement
  predictedLabel: HTMLElement
  kindSelect: HTMLSelectElement
  templateSelect: HTMLSelectElement
  flippedToggle: HTMLInputElement
  newTemplateInput: HTMLInputElement
  submitButton: HTMLButtonElement
  clearButton: HTMLButtonElement
  validation: HTMLElement
}

export function mountApp(root: HTMLElement): AppElements {
  root.innerHTML = ''
  const status = el('div', { id: 'status', class: 'status' })

  const stage = el('div', { class: 'stage' })
  const image = el('img', { id: 'question-image', alt: 'object' }) as HTMLImageElement
  const overlay = el('canvas', { id: 'overlay' }) as HTMLCanvasElement
  stage.append(image, overlay)

  const predictedLabel = el('div', { id: 'predicted' })

  const kindSelect = el('select', { id: 'kind' }) as HTMLSelectElement
  for (const { kind, label } of ANSWER_KINDS) {
    const option = el('option', { value: String(kind) })
    option.textContent = `${kind}: ${label}`
    kindSelect.append(option)
  }

  const templateSelect = el('select', { id: 'template' }) as HTMLSelectElement
  const flippedToggle = el('input', { id: 'flipped', type: 'checkbox' }) as HTMLInputElement
  const newTemplateInput = el('input', {
    id: 'new-template',
    type: 'text',
    placeholder: 'new template name',
  }) as HTMLInputElement
  const submitButton = el('button', { id: 'submit' }) as HTMLButtonElement
  submitButton.textContent = 'submit answer'
  const clearButton = el('button', { id: 'clear-box' }) as HTMLButtonElement
  clearButton.textContent = 'clear box'
  const validation = el('div', { id: 'validation', class: 'validation' })

  const form = el('div', { class: 'answer-form' })
  form.append(
    labeled('answer', kindSelect),
    labeled('template', templateSelect),
    labeled('flipped', flippedToggle),
    labeled('name', newTemplateInput),
    clearButton,
    submitButton,
    validation,
  )
  root.append(status, stage, predictedLabel, form)
  return {
    status,
    image,
    overlay,
    predictedLabel,
    kindSelect,
    templateSelect,
    flippedToggle,
    newTemplateInput,
    submitButton,
    clearButton,
    validation,
  }
}

export function renderState(ui: AppElements, state: SessionState) {
  ui.status.textContent =
    `${state.part_name}: ${state.annotated.length} annotated, ` +
    `${state.unannotated.length} open, ${state.absent.length} absent, ` +
    `${state.remaining_budget} questions left`
  const known = ui.templateSelect
  known.innerHTML = ''
  for (const t of state.templates) {
    const option = document.createElement('option')
    option.value = t.id
    option.textContent = t.name
    known.append(option)
  }
}

export function renderQuestion(ui: AppElements, question: QuestionDoc) {
  ui.image.src = question.image_data
    ? `data:image/png;base64,${question.image_data}`
    : ''
  ui.predictedLabel.textContent = question.predicted_template_id
    ? `predicted: ${question.predicted_template_id}`
    : 'no prediction yet'
}

export function renderIdle(ui: AppElements, message: string) {
  ui.predictedLabel.textContent = message
  ui.image.src = ''
}

function el(tag: string, attrs: Record<string, string> = {}): HTMLElement {
  const node = document.createElement(tag)
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v)
  return node
}

function labeled(text: string, control: HTMLElement): HTMLElement {
  const wrap = document.createElement('label')
  wrap.append(text + ' ', control)
  return wrap
}
