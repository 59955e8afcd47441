import type { Spectrum } from "./csv"

export interface ChartContext {
  strokeStyle: string | CanvasGradient | CanvasPattern
  fillStyle: string | CanvasGradient | CanvasPattern
  lineWidth: number
  font: string
  beginPath(): void
  moveTo(x: number, y: number): void
  lineTo(x: number, y: number): void
  stroke(): void
  fillText(text: string, x: number, y: number): void
  clearRect(x: number, y: number, w: number, h: number): void
}

const MARGIN = { left: 48, right: 8, top: 8, bottom: 24 }

export interface ChartPoint {
  x: number
  y: number
}

/** Map spectrum samples into chart pixel coordinates (y grows downward). */
export function chartPoints(spectrum: Spectrum, width: number, height: number): ChartPoint[] {
  const xs = spectrum.energyEv ?? spectrum.channelIndex
  const ys = spectrum.counts
  if (xs.length === 0) return []
  const xMin = Math.min(...xs)
  const xMax = Math.max(...xs)
  const yMin = Math.min(...ys)
  const yMax = Math.max(...ys)
  const plotW = width - MARGIN.left - MARGIN.right
  const plotH = height - MARGIN.top - MARGIN.bottom
  const xSpan = xMax - xMin || 1
  const ySpan = yMax - yMin || 1
  return xs.map((x, i) => ({
    x: MARGIN.left + ((x - xMin) / xSpan) * plotW,
    y: MARGIN.top + (1 - (ys[i] - yMin) / ySpan) * plotH,
  }))
}

export function drawSpectrum(
  ctx: ChartContext, spectrum: Spectrum, width: number, height: number,
): void {
  ctx.clearRect(0, 0, width, height)
  const points = chartPoints(spectrum, width, height)
  if (points.length === 0) return
  ctx.strokeStyle = "#888"
  ctx.lineWidth = 1
  ctx.beginPath()
  ctx.moveTo(MARGIN.left, MARGIN.top)
  ctx.lineTo(MARGIN.left, height - MARGIN.bottom)
  ctx.lineTo(width - MARGIN.right, height - MARGIN.bottom)
  ctx.stroke()

  ctx.strokeStyle = "#2266cc"
  ctx.beginPath()
  points.forEach((p, i) => (i === 0 ? ctx.moveTo(p.x, p.y) : ctx.lineTo(p.x, p.y)))
  ctx.stroke()

  ctx.fillStyle = "#444"
  ctx.font = "11px sans-serif"
  const yMax = Math.max(...spectrum.counts)
  const yMin = Math.min(...spectrum.counts)
  ctx.fillText(yMax.toPrecision(4), 2, MARGIN.top + 10)
  ctx.fillText(yMin.toPrecision(4), 2, height - MARGIN.bottom)
  ctx.fillText(spectrum.energyEv ? "energy (eV)" : "channel",
    width / 2 - 24, height - 6)
}
