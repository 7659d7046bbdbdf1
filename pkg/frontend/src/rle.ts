// Inline mask run-length coding, identical to the service format:
// "rle:W,H:run,run,..." with alternating zero/one runs starting at zero,
// row-major scan order.

export function maskToRle(mask: Uint8Array, width: number, height: number): string {
  if (mask.length !== width * height) {
    throw new Error(`mask has ${mask.length} pixels, expected ${width * height}`);
  }
  const runs: number[] = [];
  let current = 0;
  let count = 0;
  for (let i = 0; i < mask.length; i++) {
    const bit = mask[i] ? 1 : 0;
    if (bit === current) {
      count++;
    } else {
      runs.push(count);
      current = bit;
      count = 1;
    }
  }
  runs.push(count);
  return `rle:${width},${height}:${runs.join(",")}`;
}

export function rleToMask(text: string): { mask: Uint8Array; width: number; height: number } {
  if (!text.startsWith("rle:")) {
    throw new Error("inline mask must start with 'rle:'");
  }
  const body = text.slice(4);
  const sep = body.indexOf(":");
  if (sep < 0) {
    throw new Error("malformed RLE mask");
  }
  const [w, h] = body.slice(0, sep).split(",").map(Number);
  if (!Number.isInteger(w) || !Number.isInteger(h) || w <= 0 || h <= 0) {
    throw new Error("malformed RLE dimensions");
  }
  const counts = body.slice(sep + 1).split(",").map(Number);
  const mask = new Uint8Array(w * h);
  let pos = 0;
  let value = 0;
  for (const count of counts) {
    if (!Number.isInteger(count) || count < 0) {
      throw new Error("malformed RLE run");
    }
    if (value) {
      mask.fill(1, pos, pos + count);
    }
    pos += count;
    value = 1 - value;
  }
  if (pos !== w * h) {
    throw new Error(`RLE runs cover ${pos} pixels, expected ${w * h}`);
  }
  return { mask, width: w, height: h };
}
