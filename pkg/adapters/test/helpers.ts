import * as fs from "node:fs";

export interface Y4mOptions {
  width: number;
  height: number;
  fps: number;
  nFrames: number;
  /** luma value per (frame, x, y); default is a moving gradient */
  pattern?: (t: number, x: number, y: number) => number;
  chroma?: "420jpeg" | "444" | "mono";
}

export function makeY4m(opts: Y4mOptions): Buffer {
  const { width, height, fps, nFrames } = opts;
  const pattern = opts.pattern ?? ((t, x, y) => (3 * t + 5 * x + 7 * y) % 256);
  const chroma = opts.chroma ?? "420jpeg";
  const chunks: Buffer[] = [Buffer.from(`YUV4MPEG2 W${width} H${height} F${fps}:1 Ip A1:1 C${chroma}\n`, "ascii")];
  let chromaSize: number;
  if (chroma === "420jpeg") chromaSize = 2 * ((width / 2) * (height / 2));
  else if (chroma === "444") chromaSize = 2 * width * height;
  else chromaSize = 0;
  for (let t = 0; t < nFrames; t++) {
    chunks.push(Buffer.from("FRAME\n", "ascii"));
    const luma = Buffer.alloc(width * height);
    for (let y = 0; y < height; y++) {
      for (let x = 0; x < width; x++) {
        luma[y * width + x] = pattern(t, x, y) & 0xff;
      }
    }
    chunks.push(luma, Buffer.alloc(chromaSize, 128));
  }
  return Buffer.concat(chunks);
}

export function writeY4m(path: string, opts: Y4mOptions): void {
  fs.writeFileSync(path, makeY4m(opts));
}
