export interface PgmImage {
  width: number
  height: number
  maxval: number
  pixels: Uint8Array
}

/** Parse a binary portable graymap (P5) artifact. */
export function parsePgm(buffer: ArrayBuffer): PgmImage {
  const bytes = new Uint8Array(buffer)
  // header: "P5" <ws> width <ws> height <ws> maxval <single ws> pixels
  let pos = 0
  const isSpace = (b: number) => b === 0x20 || b === 0x0a || b === 0x0d || b === 0x09

  function readToken(): string {
    while (pos < bytes.length && isSpace(bytes[pos])) pos++
    const start = pos
    while (pos < bytes.length && !isSpace(bytes[pos])) pos++
    if (start === pos) throw new Error("truncated PGM header")
    return String.fromCharCode(...bytes.subarray(start, pos))
  }

  if (readToken() !== "P5") throw new Error("not a binary PGM (P5) stream")
  const width = Number(readToken())
  const height = Number(readToken())
  const maxval = Number(readToken())
  if (!Number.isInteger(width) || !Number.isInteger(height) || width < 1 || height < 1) {
    throw new Error("bad PGM dimensions")
  }
  if (maxval !== 255) throw new Error(`unsupported PGM maxval ${maxval}`)
  pos += 1 // single whitespace byte after maxval
  const expected = width * height
  const pixels = bytes.subarray(pos, pos + expected)
  if (pixels.length !== expected) throw new Error("truncated PGM pixel data")
  return { width, height, maxval, pixels: new Uint8Array(pixels) }
}

/** Expand grayscale pixels to RGBA for a canvas ImageData buffer. */
export function toRgba(image: PgmImage): Uint8ClampedArray<ArrayBuffer> {
  const out = new Uint8ClampedArray(image.width * image.height * 4)
  for (let i = 0; i < image.pixels.length; i++) {
    const v = image.pixels[i]
    const j = i * 4
    out[j] = v
    out[j + 1] = v
    out[j + 2] = v
    out[j + 3] = 255
  }
  return out
}
