/**
 * Stub trainer hook for the progressive transfer pipeline.
 *
 * The pipeline invokes its training hook once per stage as
 *
 *     node dist/examples/distill_stage.js --teacher <ref> --data <dir> --out <ref>
 *
 * A real integration would load the teacher checkpoint, train a student on
 * the stage's beam-labeled scans, and write the student checkpoint to the
 * --out path. This stub verifies the stage data is readable, records a
 * summary, and writes a JSON "model" so the pipeline can chain stages.
 */

import * as fs from "fs";
import * as path from "path";

import { readScan } from "../src/scanFormats";

function parseArgs(argv: string[]): Map<string, string> {
  const out = new Map<string, string>();
  for (let i = 0; i < argv.length - 1; i++) {
    if (argv[i].startsWith("--")) out.set(argv[i].slice(2), argv[i + 1]);
  }
  return out;
}

function main(): void {
  const args = parseArgs(process.argv.slice(2));
  const teacher = args.get("teacher");
  const dataDir = args.get("data");
  const outRef = args.get("out");
  if (!teacher || !dataDir || !outRef) {
    console.error("usage: distill_stage --teacher <ref> --data <dir> --out <ref>");
    process.exit(2);
  }

  const scans = fs
    .readdirSync(dataDir)
    .filter((f) => f.endsWith(".bfrg"))
    .sort();
  if (scans.length === 0) {
    console.error(`no scans in ${dataDir}`);
    process.exit(2);
  }

  let points = 0;
  let beams = 0;
  for (const name of scans) {
    const cloud = readScan(path.join(dataDir, name));
    points += cloud.count;
    beams = Math.max(beams, cloud.beamCount ?? 0);
  }

  fs.writeFileSync(
    outRef,
    JSON.stringify(
      {
        kind: "stub-student-model",
        teacher,
        scans: scans.length,
        points,
        beams,
      },
      null,
      2
    )
  );
  console.log(`trained stub student on ${scans.length} scans (${points} points)`);
}

main();
