import type { CatalogApi } from "./api"
import { parseSpectrumCsv, type Spectrum } from "./csv"
import { parsePgm, type PgmImage } from "./pgm"
import { flowKindOf } from "./search"
import type { CatalogRecord, DetectionBox, FlowKind } from "./types"

export interface DetailModel {
  record: CatalogRecord
  kind: FlowKind
  intensity: PgmImage | null
  spectrum: Spectrum | null
  frameNames: string[] // ordered frame artifact names
  detections: DetectionBox[]
}

/**
 * Fetch a record plus the artifacts its page needs.  All displayed values
 * come from the record or its artifacts; nothing is recomputed client-side.
 */
export async function loadDetail(api: CatalogApi, recordId: string): Promise<DetailModel> {
  const record = await api.record(recordId)
  const kind = flowKindOf(record)
  const model: DetailModel = {
    record,
    kind,
    intensity: null,
    spectrum: null,
    frameNames: record.artifacts.filter((a) => a.kind === "frame").map((a) => a.name),
    detections: [],
  }
  const intensity = record.artifacts.find((a) => a.kind === "intensity_map")
  if (intensity) {
    model.intensity = parsePgm(await api.artifactBytes(recordId, intensity.name))
  }
  const spectrumCsv = record.artifacts.find((a) => a.kind === "spectrum_csv")
  if (spectrumCsv) {
    model.spectrum = parseSpectrumCsv(await api.artifactText(recordId, spectrumCsv.name))
  }
  const detections = record.artifacts.find((a) => a.kind === "detections")
  if (detections) {
    model.detections = await api.artifactJson<DetectionBox[]>(recordId, detections.name)
  }
  return model
}

export interface MetadataRow {
  label: string
  value: string
}

/** Flatten record metadata into display rows, nested keys dotted. */
export function metadataRows(record: CatalogRecord): MetadataRow[] {
  const rows: MetadataRow[] = []
  const walk = (node: unknown, prefix: string) => {
    if (node === null || node === undefined) {
      rows.push({ label: prefix, value: "" })
    } else if (Array.isArray(node)) {
      if (node.every((v) => typeof v !== "object")) {
        rows.push({ label: prefix, value: node.join(", ") })
      } else {
        node.forEach((v, i) => walk(v, `${prefix}[${i}]`))
      }
    } else if (typeof node === "object") {
      for (const [key, value] of Object.entries(node as Record<string, unknown>)) {
        walk(value, prefix ? `${prefix}.${key}` : key)
      }
    } else {
      rows.push({ label: prefix, value: String(node) })
    }
  }
  walk(record.metadata, "")
  return rows
}
