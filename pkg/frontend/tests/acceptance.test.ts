/** Portal acceptance: search-page/API consistency over randomized queries
 * and pixel-exact detection overlays on a fixture record. */

import { describe, expect, it } from "vitest"

import { CatalogApi } from "../src/api"
import { loadDetail } from "../src/detail"
import { boxesForFrame, drawBoxes } from "../src/overlay"
import { searchPage } from "../src/search"
import type { CatalogRecord, DetectionBox, SearchParams } from "../src/types"
import { FakeCatalog } from "./fakecatalog"

/** Deterministic 32-bit LCG so the "random" queries are reproducible. */
function lcg(seed: number): () => number {
  let state = seed >>> 0
  return () => {
    state = (state * 1664525 + 1013904223) >>> 0
    return state / 2 ** 32
  }
}

const WORDS = ["gold", "nanoparticles", "carbon", "background", "film",
  "polyamide", "oxide", "lattice", "grain", "vacuum"]
const PRINCIPALS = ["alice", "bob", "carol"]

function buildCorpus(rand: () => number, count: number): CatalogRecord[] {
  const records: CatalogRecord[] = []
  for (let i = 0; i < count; i++) {
    const hours = Math.floor(rand() * 5000)
    const when = new Date(Date.UTC(2023, 0, 1) + hours * 3600_000).toISOString()
    const visible = rand() < 0.5
      ? ["public"]
      : [PRINCIPALS[Math.floor(rand() * PRINCIPALS.length)]]
    const words = Array.from({ length: 1 + Math.floor(rand() * 3) },
      () => WORDS[Math.floor(rand() * WORDS.length)])
    records.push({
      record_id: `rec-${String(i).padStart(4, "0")}`,
      flow_id: `flow-${String(i).padStart(4, "0")}`,
      acquisition_datetime: when,
      metadata: { sample: { description: words.join(" "), elements: ["Au", "C"] } },
      artifacts: [],
      visible_to: visible,
      published_at: "2023-06-01T00:00:00Z",
    })
  }
  return records
}

describe("portal-API consistency", () => {
  it("search page ids equal the direct API response for 20 random queries", async () => {
    const rand = lcg(20230501)
    const corpus = buildCorpus(rand, 200)
    const fake = new FakeCatalog(corpus, { "alice-token": "alice" })
    const api = new CatalogApi("", fake.fetch)
    if (rand() < 0.5) api.setToken("alice-token")

    for (let i = 0; i < 20; i++) {
      const params: SearchParams = {}
      if (rand() < 0.6) {
        params.text = Array.from({ length: 1 + Math.floor(rand() * 2) },
          () => WORDS[Math.floor(rand() * WORDS.length)]).join(" ")
      }
      if (rand() < 0.5) {
        const a = Date.UTC(2023, 0, 1) + Math.floor(rand() * 5000) * 3600_000
        const b = Date.UTC(2023, 0, 1) + Math.floor(rand() * 5000) * 3600_000
        params.from = new Date(Math.min(a, b)).toISOString()
        params.to = new Date(Math.max(a, b)).toISOString()
      }
      if (rand() < 0.3) params.offset = Math.floor(rand() * 3) * 10

      const direct = await api.search({ limit: 20, offset: 0, ...params })
      const view = await searchPage(api, params)
      expect(view.rows.map((r) => r.recordId))
        .toEqual(direct.records.map((r) => r.record_id))
      expect(view.total).toBe(direct.total)
    }
  })

  it("never issues a mutating request", async () => {
    const fake = new FakeCatalog(buildCorpus(lcg(7), 10))
    const api = new CatalogApi("", fake.fetch)
    await searchPage(api, { text: "gold" })
    for (const req of fake.requests) expect(req.method).toBe("GET")
  })
})

describe("detail overlays", () => {
  // fixture mirrors a real detections.json artifact: frame-major order,
  // integer pixel boxes, confidences in [0, 1]
  const FIXTURE: DetectionBox[] = [
    { frame_index: 0, x: 12, y: 9, w: 11, h: 10, confidence: 1.0 },
    { frame_index: 0, x: 40, y: 33, w: 8, h: 9, confidence: 0.94 },
    { frame_index: 1, x: 13, y: 10, w: 11, h: 10, confidence: 0.99 },
    { frame_index: 1, x: 39, y: 35, w: 8, h: 9, confidence: 0.91 },
    { frame_index: 2, x: 14, y: 10, w: 11, h: 10, confidence: 0.97 },
  ]

  function pgmBytes(width: number, height: number): Uint8Array {
    const header = new TextEncoder().encode(`P5\n${width} ${height}\n255\n`)
    const out = new Uint8Array(header.length + width * height)
    out.set(header, 0)
    return out
  }

  function fixtureCatalog(): FakeCatalog {
    const record: CatalogRecord = {
      record_id: "rec-st",
      flow_id: "flow-st",
      acquisition_datetime: "2023-05-01T10:00:00Z",
      metadata: {
        sample: { description: "gold nanoparticles on carbon" },
        datasets: [{ name: "stack", dtype: "f64", dims: [3, 64, 64],
          axes: ["time", "height", "width"], payload_bytes: 98304 }],
      },
      artifacts: [
        { kind: "frame", name: "frame_0000.pgm", path: "/x/frame_0000.pgm" },
        { kind: "frame", name: "frame_0001.pgm", path: "/x/frame_0001.pgm" },
        { kind: "frame", name: "frame_0002.pgm", path: "/x/frame_0002.pgm" },
        { kind: "detections", name: "detections.json", path: "/x/detections.json" },
      ],
      visible_to: ["public"],
      published_at: "2023-06-01T00:00:00Z",
    }
    return new FakeCatalog([record], {}, {
      "rec-st": {
        "frame_0000.pgm": pgmBytes(64, 64),
        "frame_0001.pgm": pgmBytes(64, 64),
        "frame_0002.pgm": pgmBytes(64, 64),
        "detections.json": JSON.stringify(FIXTURE),
      },
    })
  }

  it("overlay strokes equal detections.json values pixel-exactly per frame", async () => {
    const fake = fixtureCatalog()
    const api = new CatalogApi("", fake.fetch)
    const model = await loadDetail(api, "rec-st")
    expect(model.kind).toBe("spatiotemporal")
    expect(model.frameNames).toEqual(
      ["frame_0000.pgm", "frame_0001.pgm", "frame_0002.pgm"])
    expect(model.detections).toEqual(FIXTURE)

    for (const frameIndex of [0, 1, 2]) {
      const strokes: Array<[number, number, number, number]> = []
      const ctx = {
        strokeStyle: "", fillStyle: "", lineWidth: 0, font: "",
        strokeRect: (x: number, y: number, w: number, h: number) => {
          strokes.push([x, y, w, h])
        },
        fillText: () => undefined,
      }
      drawBoxes(ctx, boxesForFrame(model.detections, frameIndex))
      const expected = FIXTURE
        .filter((b) => b.frame_index === frameIndex)
        .map((b) => [b.x, b.y, b.w, b.h])
      expect(strokes).toEqual(expected)
    }
  })

  it("slider frame selection shows only that frame's boxes", async () => {
    const fake = fixtureCatalog()
    const api = new CatalogApi("", fake.fetch)
    const model = await loadDetail(api, "rec-st")
    const frame1 = boxesForFrame(model.detections, 1)
    expect(frame1.every((b) => b.frame_index === 1)).toBe(true)
    expect(frame1.length).toBe(2)
  })
})
