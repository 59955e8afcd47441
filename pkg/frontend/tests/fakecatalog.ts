/** In-memory catalog server behind a fetch-shaped function, mirroring the
 * API's search semantics (AND tokens, inclusive dates, newest first). */

import type { FetchLike } from "../src/api"
import type { CatalogRecord } from "../src/types"

export function tokenize(text: string): string[] {
  return text.toLowerCase().split(/[^0-9a-z]+/).filter((t) => t.length > 0)
}

function stringLeaves(node: unknown): string[] {
  if (typeof node === "string") return [node]
  if (Array.isArray(node)) return node.flatMap(stringLeaves)
  if (node && typeof node === "object") {
    return Object.values(node as Record<string, unknown>).flatMap(stringLeaves)
  }
  return []
}

export function recordTokens(record: CatalogRecord): Set<string> {
  const tokens = new Set<string>()
  for (const t of tokenize(record.record_id)) tokens.add(t)
  for (const t of tokenize(record.flow_id)) tokens.add(t)
  for (const leaf of stringLeaves(record.metadata)) {
    for (const t of tokenize(leaf)) tokens.add(t)
  }
  return tokens
}

export function visibleTo(record: CatalogRecord, principal: string | null): boolean {
  return record.visible_to.includes("public") ||
    (principal !== null && record.visible_to.includes(principal))
}

export interface LoggedRequest {
  method: string
  url: string
}

export class FakeCatalog {
  requests: LoggedRequest[] = []

  constructor(
    public records: CatalogRecord[],
    private tokens: Record<string, string> = {},
    public artifacts: Record<string, Record<string, Uint8Array | string>> = {},
  ) {}

  fetch: FetchLike = async (url, init) => {
    const method = init?.method ?? "GET"
    this.requests.push({ method, url })
    if (method !== "GET") {
      return this.json(405, { error: "read-only fake" })
    }
    const headers = (init?.headers ?? {}) as Record<string, string>
    const auth = headers["Authorization"] ?? ""
    const principal = auth.startsWith("Bearer ")
      ? this.tokens[auth.slice(7)] ?? null
      : null

    const parsed = new URL(url, "http://fake")
    if (parsed.pathname === "/search") return this.search(parsed, principal)
    if (parsed.pathname.startsWith("/records/")) {
      return this.record(
        decodeURIComponent(parsed.pathname.slice("/records/".length)), principal)
    }
    if (parsed.pathname.startsWith("/artifacts/")) {
      return this.artifact(parsed.pathname.slice("/artifacts/".length), principal)
    }
    return this.json(404, { error: "not found" })
  }

  private json(status: number, body: unknown): Response {
    return new Response(JSON.stringify(body), {
      status,
      headers: { "Content-Type": "application/json" },
    })
  }

  private search(parsed: URL, principal: string | null): Response {
    const text = parsed.searchParams.get("text")
    const from = parsed.searchParams.get("from")
    const to = parsed.searchParams.get("to")
    const limit = Number(parsed.searchParams.get("limit") ?? "50")
    const offset = Number(parsed.searchParams.get("offset") ?? "0")
    const tsFrom = from ? Date.parse(from) : null
    const tsTo = to ? Date.parse(to) : null
    if ((from && Number.isNaN(tsFrom)) || (to && Number.isNaN(tsTo))) {
      return this.json(400, { error: "bad dates" })
    }
    const tokens = text ? tokenize(text) : []
    const matches = this.records.filter((record) => {
      const ts = Date.parse(record.acquisition_datetime)
      if (tsFrom !== null && ts < tsFrom) return false
      if (tsTo !== null && ts > tsTo) return false
      if (!visibleTo(record, principal)) return false
      if (tokens.length > 0) {
        const body = recordTokens(record)
        if (tokens.some((t) => !body.has(t))) return false
      }
      return true
    })
    matches.sort((a, b) => {
      const delta = Date.parse(b.acquisition_datetime) - Date.parse(a.acquisition_datetime)
      if (delta !== 0) return delta
      return a.record_id < b.record_id ? -1 : a.record_id > b.record_id ? 1 : 0
    })
    return this.json(200, {
      total: matches.length,
      records: matches.slice(offset, offset + limit),
    })
  }

  private record(recordId: string, principal: string | null): Response {
    const record = this.records.find((r) => r.record_id === recordId)
    if (!record) return this.json(404, { error: "no such record" })
    if (!visibleTo(record, principal)) return this.json(401, { error: "not authorized" })
    return this.json(200, record)
  }

  private artifact(rest: string, principal: string | null): Response {
    const slash = rest.indexOf("/")
    if (slash < 0) return this.json(404, { error: "not found" })
    const recordId = decodeURIComponent(rest.slice(0, slash))
    const name = decodeURIComponent(rest.slice(slash + 1))
    const record = this.records.find((r) => r.record_id === recordId)
    if (!record) return this.json(404, { error: "no such record" })
    if (!visibleTo(record, principal)) return this.json(401, { error: "not authorized" })
    const payload = this.artifacts[recordId]?.[name]
    if (payload === undefined) return this.json(404, { error: "no such artifact" })
    const body = typeof payload === "string" ? payload : payload.slice()
    return new Response(body, { status: 200 })
  }
}
