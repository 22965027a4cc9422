// Controller: one question in flight, submit disabled while posting, the
// template list refreshed after every answer so new branches appear at once.

import { ApiError, SessionApi, type Box, type QuestionDoc } from './api.js'
import { buildPayload, freshForm, isSubmittable, missingFields, type FormState } from './answerForm.js'
import { BoxDrawer, drawOverlay } from './boxdraw.js'
import { mountApp, renderIdle, renderQuestion, renderState, type AppElements } from './view.js'

const IMAGE_SIDE = 224

export class AnnotatorApp {
  readonly ui: AppElements
  readonly drawer: BoxDrawer
  form: FormState = freshForm()
  question: QuestionDoc | null = null
  lastSubmit: Promise<void> = Promise.resolve()
  private posting = false

  constructor(root: HTMLElement, private api: SessionApi) {
    this.ui = mountApp(root)
    this.ui.overlay.width = IMAGE_SIDE
    this.ui.overlay.height = IMAGE_SIDE
    this.drawer = new BoxDrawer(this.ui.overlay)
    this.drawer.onChange = (box) => {
      this.form.box = box
      this.refreshControls()
    }
    this.ui.kindSelect.addEventListener('change', () => {
      this.form.kind = Number(this.ui.kindSelect.value)
      this.refreshControls()
    })
    this.ui.templateSelect.addEventListener('change', () => {
      this.form.templateId = this.ui.templateSelect.value || null
      this.refreshControls()
    })
    this.ui.flippedToggle.addEventListener('change', () => {
      this.form.flipped = this.ui.flippedToggle.checked
    })
    this.ui.newTemplateInput.addEventListener('input', () => {
      this.form.newTemplate = this.ui.newTemplateInput.value
    })
    this.ui.clearButton.addEventListener('click', () => this.drawer.clear())
    this.ui.submitButton.addEventListener('click', () => {
      this.lastSubmit = this.submit()
    })
  }

  async refresh(): Promise<boolean> {
    const state = await this.api.state()
    renderState(this.ui, state)
    try {
      this.question = await this.api.nextQuestion()
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.question = null
        renderIdle(this.ui, 'session idle: no further questions')
        return false
      }
      renderIdle(this.ui, 'server unreachable, retry shortly')
      throw err
    }
    this.form = freshForm()
    this.form.kind = Number(this.ui.kindSelect.value)
    this.form.templateId = this.ui.templateSelect.value || null
    this.ui.flippedToggle.checked = false
    this.ui.newTemplateInput.value = ''
    this.drawer.clear()
    renderQuestion(this.ui, this.question)
    this.redraw()
    this.refreshControls()
    return true
  }

  private redraw() {
    const ctx = this.ui.overlay.getContext('2d')
    if (!ctx) return // no 2d context in DOM emulators; coordinates still flow
    drawOverlay(ctx, this.question?.predicted_box ?? null, this.form.box)
  }

  refreshControls() {
    const needsBox = [2, 3, 4].includes(this.form.kind)
    this.drawer.enabled = needsBox
    this.ui.submitButton.disabled = this.posting || !isSubmittable(this.form)
    this.ui.validation.textContent = isSubmittable(this.form)
      ? ''
      : `required: ${missingFields(this.form).join(', ')}`
    this.redraw()
  }

  async submit(): Promise<void> {
    if (this.posting || !this.question) return
    if (!isSubmittable(this.form)) {
      this.ui.validation.textContent = `required: ${missingFields(this.form).join(', ')}`
      return
    }
    this.posting = true
    this.ui.submitButton.disabled = true
    try {
      await this.api.submitAnswer(buildPayload(this.form))
      this.posting = false
      await this.refresh()
    } catch (err) {
      this.posting = false
      if (err instanceof ApiError && err.status === 422) {
        this.ui.validation.textContent = err.message
        this.refreshControls()
        return
      }
      throw err
    }
  }

  setKind(kind: number) {
    this.ui.kindSelect.value = String(kind)
    this.ui.kindSelect.dispatchEvent(new Event('change'))
  }
}

export function boot() {
  const root = document.getElementById('app')
  if (!root) throw new Error('missing #app container')
  const app = new AnnotatorApp(root, new SessionApi(''))
  void app.refresh()
  return app
}

declare global {
  interface Window {
    __annotator?: AnnotatorApp
  }
}

if (typeof window !== 'undefined' && document.getElementById('app')) {
  window.__annotator = boot()
}
