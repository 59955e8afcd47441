import type { CatalogApi } from "./api"
import type { CatalogRecord, FlowKind, SearchParams } from "./types"

export interface RecordSummary {
  recordId: string
  acquisitionDatetime: string
  sampleDescription: string
  flowKind: FlowKind
  thumbnail: string | null // artifact name usable as a preview
}

export interface SearchView {
  params: SearchParams
  total: number
  rows: RecordSummary[]
  pageIndex: number
  pageCount: number
}

export const PAGE_SIZE = 20

export function flowKindOf(record: CatalogRecord): FlowKind {
  const datasets = record.metadata.datasets ?? []
  for (const ds of datasets) {
    const axes = ds.axes.join(",")
    if (axes === "width,height,energy") return "hyperspectral"
    if (axes === "time,height,width") return "spatiotemporal"
  }
  return "unknown"
}

export function summarize(record: CatalogRecord): RecordSummary {
  const intensity = record.artifacts.find((a) => a.kind === "intensity_map")
  const firstFrame = record.artifacts.find((a) => a.kind === "frame")
  return {
    recordId: record.record_id,
    acquisitionDatetime: record.acquisition_datetime,
    sampleDescription: record.metadata.sample?.description ?? "",
    flowKind: flowKindOf(record),
    thumbnail: intensity?.name ?? firstFrame?.name ?? null,
  }
}

/**
 * Run one search-page query: issues GET /search with exactly the caller's
 * parameters and maps records to row view models in API order.
 */
export async function searchPage(api: CatalogApi, params: SearchParams): Promise<SearchView> {
  const effective: SearchParams = { limit: PAGE_SIZE, offset: 0, ...params }
  const page = await api.search(effective)
  const limit = effective.limit ?? PAGE_SIZE
  const offset = effective.offset ?? 0
  return {
    params: effective,
    total: page.total,
    rows: page.records.map(summarize),
    pageIndex: limit > 0 ? Math.floor(offset / limit) : 0,
    pageCount: limit > 0 ? Math.max(1, Math.ceil(page.total / limit)) : 1,
  }
}

/** Serialize the query state into a shareable URL fragment. */
export function queryString(params: SearchParams): string {
  const query = new URLSearchParams()
  if (params.text) query.set("text", params.text)
  if (params.from) query.set("from", params.from)
  if (params.to) query.set("to", params.to)
  if (params.offset) query.set("offset", String(params.offset))
  if (params.limit !== undefined && params.limit !== PAGE_SIZE) {
    query.set("limit", String(params.limit))
  }
  return query.toString()
}

export function parseQueryString(qs: string): SearchParams {
  const query = new URLSearchParams(qs)
  const params: SearchParams = {}
  const text = query.get("text")
  const from = query.get("from")
  const to = query.get("to")
  const offset = query.get("offset")
  const limit = query.get("limit")
  if (text) params.text = text
  if (from) params.from = from
  if (to) params.to = to
  if (offset) params.offset = Number(offset)
  if (limit) params.limit = Number(limit)
  return params
}
