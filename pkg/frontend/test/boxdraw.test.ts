import { describe, expect, it } from 'vitest'
import { BoxDrawer } from '../src/boxdraw.js'

function drag(canvas: HTMLCanvasElement, x0: number, y0: number, x1: number, y1: number) {
  canvas.dispatchEvent(new MouseEvent('mousedown', { clientX: x0, clientY: y0, bubbles: true }))
  canvas.dispatchEvent(new MouseEvent('mousemove', { clientX: (x0 + x1) / 2, clientY: (y0 + y1) / 2, bubbles: true }))
  canvas.dispatchEvent(new MouseEvent('mouseup', { clientX: x1, clientY: y1, bubbles: true }))
}

function makeDrawer() {
  const canvas = document.createElement('canvas')
  canvas.width = 224
  canvas.height = 224
  document.body.append(canvas)
  const drawer = new BoxDrawer(canvas)
  drawer.enabled = true
  return { canvas, drawer }
}

describe('box drawing', () => {
  it('drawn pixel coordinates round-trip exactly', () => {
    const { canvas, drawer } = makeDrawer()
    drag(canvas, 72, 72, 152, 152)
    expect(drawer.box).toEqual([112, 112, 80, 80])
  })

  it('direction of the drag does not matter', () => {
    const { canvas, drawer } = makeDrawer()
    drag(canvas, 202, 152, 122, 72)
    expect(drawer.box).toEqual([162, 112, 80, 80])
  })

  it('fractional pixels survive untouched', () => {
    const { canvas, drawer } = makeDrawer()
    drag(canvas, 10.5, 20.25, 30.5, 60.25)
    expect(drawer.box).toEqual([20.5, 40.25, 20, 40])
  })

  it('ignores input while disabled and clears on demand', () => {
    const { canvas, drawer } = makeDrawer()
    drawer.enabled = false
    drag(canvas, 0, 0, 50, 50)
    expect(drawer.box).toBeNull()
    drawer.enabled = true
    drag(canvas, 0, 0, 50, 50)
    expect(drawer.box).not.toBeNull()
    drawer.clear()
    expect(drawer.box).toBeNull()
  })
})
