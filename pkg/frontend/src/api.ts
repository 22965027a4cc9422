// Typed client for the annotation-session endpoints. The server is the sole
// source of truth; nothing is cached client-side.

export type Box = [number, number, number, number] // cx, cy, w, h

export interface SessionState {
  part_name: string
  annotated: string[]
  unannotated: string[]
  absent: string[]
  questions_asked: number
  remaining_budget: number
  templates: { id: string; name: string }[]
  answer_log: unknown[]
  pending_question: QuestionDoc | null
}

export interface QuestionDoc {
  image_id: string
  predicted_template_id: string | null
  predicted_box: Box | null
  remaining_budget?: number
  image_data?: string | null
}

export interface AnswerPayload {
  kind: number
  bbox?: Box
  template_id?: string
  flipped?: boolean
  new_template?: string
}

export class SessionApi {
  constructor(private baseUrl: string = '') {}

  private async get<T>(path: string): Promise<T> {
    const res = await fetch(this.baseUrl + path)
    if (!res.ok) throw new ApiError(res.status, await res.text())
    return res.json() as Promise<T>
  }

  state(): Promise<SessionState> {
    return this.get<SessionState>('/session/state')
  }

  nextQuestion(): Promise<QuestionDoc> {
    return this.get<QuestionDoc>('/question/next')
  }

  async submitAnswer(payload: AnswerPayload): Promise<void> {
    const res = await fetch(this.baseUrl + '/answer', {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(payload),
    })
    if (!res.ok) throw new ApiError(res.status, await res.text())
  }
}

export class ApiError extends Error {
  constructor(public status: number, detail: string) {
    super(`HTTP ${status}: ${detail}`)
  }
}
