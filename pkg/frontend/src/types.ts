export interface ArtifactRef {
  kind: string
  name: string
  path: string
}

export interface DatasetSummary {
  name: string
  dtype: string
  dims: number[]
  axes: string[]
  payload_bytes: number
}

export interface CatalogRecord {
  record_id: string
  flow_id: string
  acquisition_datetime: string
  metadata: {
    acquisition_datetime?: string
    beam_energy?: number
    magnification?: number
    sample?: { description?: string; elements?: string[] }
    datasets?: DatasetSummary[]
    [key: string]: unknown
  }
  artifacts: ArtifactRef[]
  visible_to: string[]
  published_at: string
}

export interface SearchPage {
  total: number
  records: CatalogRecord[]
}

export interface DetectionBox {
  frame_index: number
  x: number
  y: number
  w: number
  h: number
  confidence: number
}

export interface SearchParams {
  text?: string
  from?: string
  to?: string
  limit?: number
  offset?: number
}

export type FlowKind = "hyperspectral" | "spatiotemporal" | "unknown"
