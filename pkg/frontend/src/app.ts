/**
 * DOM layer: hash routing, rendering, event wiring.
 *
 * All data access goes through CatalogApi (GET only); all heavy logic lives
 * in the pure modules (search, detail, overlay, chart) so it stays testable
 * without a browser.
 */

import { ApiError, CatalogApi } from "./api"
import { drawSpectrum } from "./chart"
import { loadDetail, metadataRows, type DetailModel } from "./detail"
import { boxesForFrame, canvasSize, confidenceLabel, cssSize, drawBoxes } from "./overlay"
import { parsePgm, toRgba, type PgmImage } from "./pgm"
import { parseQueryString, queryString, searchPage, PAGE_SIZE } from "./search"
import type { SearchParams } from "./types"

const api = new CatalogApi("")

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K, attrs: Record<string, string> = {}, text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag)
  for (const [key, value] of Object.entries(attrs)) node.setAttribute(key, value)
  if (text !== undefined) node.textContent = text
  return node
}

function root(): HTMLElement {
  return document.getElementById("app") as HTMLElement
}

function banner(message: string): HTMLElement {
  return el("div", { class: "banner error" }, message)
}

function handleApiError(err: unknown, container: HTMLElement): void {
  if (err instanceof ApiError && err.status === 401) {
    container.appendChild(banner("Not authorized. Enter an access token."))
    container.appendChild(tokenPrompt())
  } else if (err instanceof ApiError && err.status === 404) {
    container.appendChild(banner("Not found."))
  } else {
    container.appendChild(banner(`Request failed: ${String(err)}`))
  }
}

function tokenPrompt(): HTMLElement {
  const form = el("form", { class: "token-form" })
  const input = el("input", {
    type: "password", placeholder: "bearer token (kept in memory only)",
  })
  const button = el("button", { type: "submit" }, "Use token")
  form.append(input, button)
  form.addEventListener("submit", (event) => {
    event.preventDefault()
    api.setToken(input.value)
    route()
  })
  return form
}

// -- search page -------------------------------------------------------

function searchForm(params: SearchParams): HTMLElement {
  const form = el("form", { class: "search-form" })
  const text = el("input", { type: "search", placeholder: "free text",
    value: params.text ?? "" })
  const from = el("input", { type: "datetime-local", title: "from" })
  const to = el("input", { type: "datetime-local", title: "to" })
  if (params.from) from.value = params.from.slice(0, 16)
  if (params.to) to.value = params.to.slice(0, 16)
  const submit = el("button", { type: "submit" }, "Search")
  form.append(text, from, to, submit)
  form.addEventListener("submit", (event) => {
    event.preventDefault()
    const next: SearchParams = {}
    if (text.value) next.text = text.value
    if (from.value) next.from = from.value
    if (to.value) next.to = to.value
    location.hash = `#/search?${queryString(next)}`
  })
  return form
}

async function renderSearch(params: SearchParams): Promise<void> {
  const container = root()
  container.replaceChildren(el("h1", {}, "Experiment catalog"), searchForm(params))
  try {
    const view = await searchPage(api, params)
    container.appendChild(el("p", { class: "total" },
      `${view.total} record(s), page ${view.pageIndex + 1} of ${view.pageCount}`))
    const list = el("table", { class: "results" })
    const head = el("tr")
    for (const label of ["Acquired", "Sample", "Kind", "Record"]) {
      head.appendChild(el("th", {}, label))
    }
    list.appendChild(head)
    for (const row of view.rows) {
      const tr = el("tr")
      tr.appendChild(el("td", {}, row.acquisitionDatetime))
      tr.appendChild(el("td", {}, row.sampleDescription))
      tr.appendChild(el("td", {}, row.flowKind))
      const link = el("a", { href: `#/record/${encodeURIComponent(row.recordId)}` },
        row.recordId)
      const td = el("td")
      td.appendChild(link)
      tr.appendChild(td)
      list.appendChild(tr)
    }
    container.appendChild(list)
    container.appendChild(pager(params, view.total))
  } catch (err) {
    handleApiError(err, container)
  }
}

function pager(params: SearchParams, total: number): HTMLElement {
  const nav = el("div", { class: "pager" })
  const limit = params.limit ?? PAGE_SIZE
  const offset = params.offset ?? 0
  if (offset > 0) {
    const prev = el("a", { href: `#/search?${queryString(
      { ...params, offset: Math.max(0, offset - limit) })}` }, "previous")
    nav.appendChild(prev)
  }
  if (offset + limit < total) {
    const next = el("a", { href: `#/search?${queryString(
      { ...params, offset: offset + limit })}` }, "next")
    nav.appendChild(next)
  }
  return nav
}

// -- detail page -------------------------------------------------------

function paintPgm(canvas: HTMLCanvasElement, image: PgmImage, zoom = 1): CanvasRenderingContext2D {
  const size = canvasSize(image.width, image.height)
  canvas.width = size.width
  canvas.height = size.height
  const css = cssSize(image.width, image.height, zoom)
  canvas.style.width = `${css.cssWidth}px`
  canvas.style.height = `${css.cssHeight}px`
  canvas.style.imageRendering = "pixelated"
  const ctx = canvas.getContext("2d") as CanvasRenderingContext2D
  ctx.putImageData(new ImageData(toRgba(image), image.width, image.height), 0, 0)
  return ctx
}

async function renderDetail(recordId: string): Promise<void> {
  const container = root()
  container.replaceChildren(el("a", { href: "#/search" }, "back to search"))
  try {
    const model = await loadDetail(api, recordId)
    container.appendChild(el("h1", {}, model.record.record_id))
    container.appendChild(el("p", {},
      `acquired ${model.record.acquisition_datetime} (${model.kind})`))
    if (model.intensity) renderHyperspectral(container, model)
    if (model.frameNames.length > 0) await renderScrubber(container, model)
    const table = el("table", { class: "metadata" })
    for (const row of metadataRows(model.record)) {
      const tr = el("tr")
      tr.appendChild(el("th", {}, row.label))
      tr.appendChild(el("td", {}, row.value))
      table.appendChild(tr)
    }
    container.appendChild(el("h2", {}, "Metadata"))
    container.appendChild(table)
  } catch (err) {
    handleApiError(err, container)
  }
}

function renderHyperspectral(container: HTMLElement, model: DetailModel): void {
  container.appendChild(el("h2", {}, "Intensity map"))
  const canvas = el("canvas", { class: "intensity" })
  container.appendChild(canvas)
  paintPgm(canvas, model.intensity as PgmImage, 2)
  if (model.spectrum) {
    container.appendChild(el("h2", {}, "Spectrum"))
    const chart = el("canvas", { class: "spectrum" })
    chart.width = 640
    chart.height = 240
    container.appendChild(chart)
    drawSpectrum(chart.getContext("2d") as CanvasRenderingContext2D,
      model.spectrum, chart.width, chart.height)
  }
}

async function renderScrubber(container: HTMLElement, model: DetailModel): Promise<void> {
  container.appendChild(el("h2", {}, "Frames"))
  const controls = el("div", { class: "scrubber" })
  const slider = el("input", {
    type: "range", min: "0", max: String(model.frameNames.length - 1), value: "0",
  })
  const label = el("span", {}, `frame 0 / ${model.frameNames.length - 1}`)
  controls.append(slider, label)
  container.appendChild(controls)
  const canvas = el("canvas", { class: "frame" })
  container.appendChild(canvas)
  const boxList = el("ul", { class: "boxes" })
  container.appendChild(boxList)

  const frameCache = new Map<number, PgmImage>()

  const show = async (frameIndex: number) => {
    let image = frameCache.get(frameIndex)
    if (!image) {
      const bytes = await api.artifactBytes(
        model.record.record_id, model.frameNames[frameIndex])
      image = parsePgm(bytes)
      frameCache.set(frameIndex, image)
    }
    const ctx = paintPgm(canvas, image, 2)
    const boxes = boxesForFrame(model.detections, frameIndex)
    drawBoxes(ctx, boxes)
    label.textContent = `frame ${frameIndex} / ${model.frameNames.length - 1}`
    boxList.replaceChildren(...boxes.map((box) => el("li", {},
      `(${box.x}, ${box.y}) ${box.w}x${box.h} @ ${confidenceLabel(box)}`)))
  }
  slider.addEventListener("input", () => { void show(Number(slider.value)) })
  await show(0)
}

// -- routing -----------------------------------------------------------

function route(): void {
  const hash = location.hash || "#/search"
  if (hash.startsWith("#/record/")) {
    void renderDetail(decodeURIComponent(hash.slice("#/record/".length)))
    return
  }
  const marker = hash.indexOf("?")
  const params = marker >= 0 ? parseQueryString(hash.slice(marker + 1)) : {}
  void renderSearch(params)
}

export function start(): void {
  window.addEventListener("hashchange", route)
  route()
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  start()
}
