#!/usr/bin/env node
/**
 * Adapter CLI.
 *
 *   export-visual    --video clip.y4m --out clip_v.fseq [--backend stub|pretrained]
 *   export-skeleton  --video clip.y4m --out clip_s.fseq [--backend stub|pretrained]
 *   export-manifest  --root videos/ --splits splits.json --out features/ [--backend stub|pretrained]
 *
 * Exit codes: 0 ok, 1 export failure, 2 usage, 3 missing file, 4 bad split
 * spec, 5 missing pretrained assets.
 */
import yargs from "yargs";
import { hideBin } from "yargs/helpers";
import { MissingAssetsError, resolveBackends } from "./backends.js";
import { exportManifest, exportSkeleton, exportVisual, SplitSpecError } from "./export.js";

const backendOption = {
  backend: {
    type: "string" as const,
    default: "stub",
    choices: ["stub", "pretrained"],
    describe: "stub synthesizes features; pretrained needs runner executables configured",
  },
};

export async function main(argv: string[]): Promise<number> {
  try {
    await yargs(argv)
      .scriptName("crossfuse-adapters")
      .strict()
      .demandCommand(1)
      .fail((msg, err) => {
        if (err) throw err;
        console.error(`usage error: ${msg}`);
        process.exit(2);
      })
      .command(
        "export-visual",
        "per-frame embeddings for one clip",
        { ...backendOption, video: { type: "string" as const, demandOption: true }, out: { type: "string" as const, demandOption: true } },
        (args) => {
          const { tClip } = exportVisual(args.video, args.out, resolveBackends(args.backend).visual);
          console.log(`wrote ${args.out} (${tClip} frames)`);
        },
      )
      .command(
        "export-skeleton",
        "single-person 3D joints for one clip",
        { ...backendOption, video: { type: "string" as const, demandOption: true }, out: { type: "string" as const, demandOption: true } },
        (args) => {
          const { tClip } = exportSkeleton(args.video, args.out, resolveBackends(args.backend).pose);
          console.log(`wrote ${args.out} (${tClip} frames)`);
        },
      )
      .command(
        "export-manifest",
        "export every clip in a split spec and write manifest.jsonl",
        {
          ...backendOption,
          root: { type: "string" as const, demandOption: true, describe: "directory video paths are relative to" },
          splits: { type: "string" as const, demandOption: true, describe: "JSON split spec" },
          out: { type: "string" as const, demandOption: true },
        },
        (args) => {
          const report = exportManifest(args.root, args.splits, args.out, resolveBackends(args.backend), console.log);
          console.log(
            `manifest ${report.manifestPath}: ${report.exported} exported, ${report.skipped} skipped, ` +
              `${report.failures.length} failed (${report.sidecarPath})`,
          );
        },
      )
      .parseAsync();
    return 0;
  } catch (e) {
    const err = e as NodeJS.ErrnoException;
    if (err.code === "ENOENT") {
      console.error(`error: missing file: ${err.message}`);
      return 3;
    }
    if (err instanceof SplitSpecError) {
      console.error(`error: bad split spec: ${err.message}`);
      return 4;
    }
    if (err instanceof MissingAssetsError) {
      console.error(`error: ${err.message}`);
      return 5;
    }
    console.error(`error: ${err.message}`);
    return 1;
  }
}

const entry = process.argv[1] ?? "";
if (entry.endsWith("cli.js") || entry.endsWith("cli.ts")) {
  main(hideBin(process.argv)).then((code) => {
    process.exitCode = code;
  });
}
