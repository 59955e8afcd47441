import type { CatalogRecord, SearchPage, SearchParams } from "./types"

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message)
    this.name = "ApiError"
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>

/**
 * Read-only client for the catalog HTTP API.
 *
 * The bearer token lives in instance memory only; it is never persisted.
 * Every request is a GET: this client cannot mutate catalog state.
 */
export class CatalogApi {
  private token: string | null = null

  constructor(
    private baseUrl: string = "",
    private fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  setToken(token: string | null): void {
    this.token = token && token.trim() ? token.trim() : null
  }

  hasToken(): boolean {
    return this.token !== null
  }

  private async get(url: string): Promise<Response> {
    const headers: Record<string, string> = {}
    if (this.token) headers["Authorization"] = `Bearer ${this.token}`
    const response = await this.fetchFn(this.baseUrl + url, { headers })
    if (!response.ok) {
      let detail = response.statusText
      try {
        const body = await response.json()
        if (body && typeof body.error === "string") detail = body.error
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(response.status, detail)
    }
    return response
  }

  /** Build /search?... carrying exactly the caller's parameters. */
  searchUrl(params: SearchParams): string {
    const query = new URLSearchParams()
    if (params.text !== undefined && params.text !== "") query.set("text", params.text)
    if (params.from !== undefined && params.from !== "") query.set("from", params.from)
    if (params.to !== undefined && params.to !== "") query.set("to", params.to)
    if (params.limit !== undefined) query.set("limit", String(params.limit))
    if (params.offset !== undefined) query.set("offset", String(params.offset))
    const qs = query.toString()
    return qs ? `/search?${qs}` : "/search"
  }

  async search(params: SearchParams): Promise<SearchPage> {
    const response = await this.get(this.searchUrl(params))
    return (await response.json()) as SearchPage
  }

  async record(recordId: string): Promise<CatalogRecord> {
    const response = await this.get(`/records/${encodeURIComponent(recordId)}`)
    return (await response.json()) as CatalogRecord
  }

  artifactUrl(recordId: string, name: string): string {
    return `/artifacts/${encodeURIComponent(recordId)}/${encodeURIComponent(name)}`
  }

  async artifactBytes(recordId: string, name: string): Promise<ArrayBuffer> {
    const response = await this.get(this.artifactUrl(recordId, name))
    return await response.arrayBuffer()
  }

  async artifactText(recordId: string, name: string): Promise<string> {
    const response = await this.get(this.artifactUrl(recordId, name))
    return await response.text()
  }

  async artifactJson<T>(recordId: string, name: string): Promise<T> {
    const response = await this.get(this.artifactUrl(recordId, name))
    return (await response.json()) as T
  }
}
