// Box drawing on a canvas that is sized 1:1 with the image, so every
// coordinate is already in the image's native pixel frame. Submitted values
// equal drawn values; only the on-screen stroke is clipped by the canvas.

import type { Box } from './api.js'

export class BoxDrawer {
  private dragStart: [number, number] | null = null
  private current: Box | null = null
  enabled = false
  onChange: (box: Box | null) => void = () => {}

  constructor(private canvas: HTMLCanvasElement) {
    canvas.addEventListener('mousedown', (e) => this.begin(e))
    canvas.addEventListener('mousemove', (e) => this.move(e))
    canvas.addEventListener('mouseup', (e) => this.end(e))
  }

  private point(e: MouseEvent): [number, number] {
    const rect = this.canvas.getBoundingClientRect()
    return [e.clientX - rect.left, e.clientY - rect.top]
  }

  private begin(e: MouseEvent) {
    if (!this.enabled) return
    this.dragStart = this.point(e)
  }

  private move(e: MouseEvent) {
    if (!this.enabled || this.dragStart === null) return
    this.current = this.toBox(this.dragStart, this.point(e))
    this.onChange(this.current)
  }

  private end(e: MouseEvent) {
    if (!this.enabled || this.dragStart === null) return
    this.current = this.toBox(this.dragStart, this.point(e))
    this.dragStart = null
    this.onChange(this.current)
  }

  private toBox(a: [number, number], b: [number, number]): Box {
    const w = Math.abs(b[0] - a[0])
    const h = Math.abs(b[1] - a[1])
    return [(a[0] + b[0]) / 2, (a[1] + b[1]) / 2, w, h]
  }

  get box(): Box | null {
    return this.current
  }

  clear() {
    this.dragStart = null
    this.current = null
    this.onChange(null)
  }
}

export function drawOverlay(
  ctx: CanvasRenderingContext2D,
  predicted: Box | null,
  drawn: Box | null,
) {
  ctx.clearRect(0, 0, ctx.canvas.width, ctx.canvas.height)
  if (predicted) strokeBox(ctx, predicted, '#ffc83c')
  if (drawn) strokeBox(ctx, drawn, '#4cc3ff')
}

function strokeBox(ctx: CanvasRenderingContext2D, box: Box, color: string) {
  const [cx, cy, w, h] = box
  ctx.strokeStyle = color
  ctx.lineWidth = 2
  ctx.strokeRect(cx - w / 2, cy - h / 2, w, h)
}
