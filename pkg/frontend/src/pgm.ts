// Binary PGM (P5) decoding for the send-back image.

export interface GrayImage {
  width: number;
  height: number;
  gray: Uint8Array;
}

export function decodeBase64(b64: string): Uint8Array {
  const bin = atob(b64); // global in browsers and node >= 16
  const out = new Uint8Array(bin.length);
  for (let i = 0; i < bin.length; i++) out[i] = bin.charCodeAt(i);
  return out;
}

export function decodePgm(bytes: Uint8Array): GrayImage {
  // header: "P5\n{w} {h}\n{maxval}\n" then raw gray bytes
  let pos = 0;
  const readLine = (): string => {
    let end = pos;
    while (end < bytes.length && bytes[end] !== 0x0a) end++;
    const line = new TextDecoder().decode(bytes.subarray(pos, end));
    pos = end + 1;
    return line;
  };
  if (readLine() !== "P5") throw new Error("not a binary PGM");
  const dims = readLine().split(/\s+/).map(Number);
  const maxval = Number(readLine());
  const [width, height] = dims;
  if (!width || !height || dims.length !== 2) throw new Error("bad PGM dimensions");
  if (maxval !== 255) throw new Error(`unsupported maxval ${maxval}`);
  const gray = bytes.subarray(pos, pos + width * height);
  if (gray.length !== width * height) throw new Error("truncated PGM body");
  return { width, height, gray: new Uint8Array(gray) };
}

export function decodePgmBase64(b64: string): GrayImage {
  return decodePgm(decodeBase64(b64));
}
