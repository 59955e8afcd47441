export interface Spectrum {
  channelIndex: number[]
  counts: number[]
  energyEv: number[] | null
}

/**
 * Parse a spectrum.csv artifact.
 *
 * Two layouts exist: `channel_index,counts` and
 * `channel_index,energy_ev,counts`.  Values are plotted exactly as parsed;
 * the portal never recomputes analysis results.
 */
export function parseSpectrumCsv(text: string): Spectrum {
  const lines = text.split("\n").filter((line) => line.length > 0)
  if (lines.length === 0) throw new Error("empty spectrum CSV")
  const header = lines[0].split(",")
  const hasEnergy = header.length === 3 && header[1] === "energy_ev"
  if (header[0] !== "channel_index" || header[header.length - 1] !== "counts") {
    throw new Error(`unexpected spectrum CSV header: ${lines[0]}`)
  }
  const channelIndex: number[] = []
  const counts: number[] = []
  const energyEv: number[] = []
  for (const line of lines.slice(1)) {
    const cells = line.split(",")
    if (cells.length !== header.length) {
      throw new Error(`ragged spectrum CSV row: ${line}`)
    }
    channelIndex.push(Number(cells[0]))
    if (hasEnergy) energyEv.push(Number(cells[1]))
    counts.push(Number(cells[cells.length - 1]))
  }
  return { channelIndex, counts, energyEv: hasEnergy ? energyEv : null }
}
