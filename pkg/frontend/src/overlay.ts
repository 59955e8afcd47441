import type { DetectionBox } from "./types"

/** Subset of CanvasRenderingContext2D the overlay uses; narrow so tests can
 * record calls without a DOM. */
export interface BoxContext {
  strokeStyle: string | CanvasGradient | CanvasPattern
  fillStyle: string | CanvasGradient | CanvasPattern
  lineWidth: number
  font: string
  strokeRect(x: number, y: number, w: number, h: number): void
  fillText(text: string, x: number, y: number): void
}

export const BOX_COLOR = "#ff8c00"

export function boxesForFrame(detections: DetectionBox[], frameIndex: number): DetectionBox[] {
  return detections.filter((box) => box.frame_index === frameIndex)
}

/**
 * Stroke each box at its exact detections.json coordinates.
 *
 * The canvas backing store is sized in image pixels (see canvasSize), and
 * zoom happens purely through CSS scaling, so these coordinates stay
 * pixel-exact at every zoom level.
 */
export function drawBoxes(ctx: BoxContext, boxes: DetectionBox[]): void {
  ctx.lineWidth = 1
  ctx.font = "11px sans-serif"
  for (const box of boxes) {
    ctx.strokeStyle = BOX_COLOR
    ctx.strokeRect(box.x, box.y, box.w, box.h)
    ctx.fillStyle = BOX_COLOR
    ctx.fillText(confidenceLabel(box), box.x, box.y > 12 ? box.y - 3 : box.y + box.h + 11)
  }
}

export function confidenceLabel(box: DetectionBox): string {
  return `${(box.confidence * 100).toFixed(0)}%`
}

/** Backing-store size for an image canvas: always the image's own pixels. */
export function canvasSize(imageWidth: number, imageHeight: number): { width: number; height: number } {
  return { width: imageWidth, height: imageHeight }
}

/** CSS size for a given zoom; rendering coordinates are unaffected. */
export function cssSize(imageWidth: number, imageHeight: number, zoom: number): { cssWidth: number; cssHeight: number } {
  return { cssWidth: Math.round(imageWidth * zoom), cssHeight: Math.round(imageHeight * zoom) }
}
