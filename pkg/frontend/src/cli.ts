/** CLI: render one figure from trace/sweep CSV files.
 *
 * Usage: node dist/cli.js <kind> --out fig.svg [--ref 1.514] trace1.csv [trace2.csv ...]
 * Kinds: trajectory | error_time | dc_convergence | sweep | distance_vs_error
 */

import { readFileSync, writeFileSync } from "node:fs";
import { basename } from "node:path";
import { parseCsv } from "./csv.js";
import { PlotKind, PlotInput, render } from "./plots.js";

const KINDS: PlotKind[] = [
  "trajectory", "error_time", "dc_convergence", "sweep", "distance_vs_error",
];

export function main(argv: string[]): number {
  const args = [...argv];
  const kind = args.shift();
  if (!kind || !KINDS.includes(kind as PlotKind)) {
    console.error(`usage: cli <${KINDS.join("|")}> --out FILE [--ref VALUE] CSV...`);
    return 2;
  }
  let out = "";
  let ref: number | undefined;
  const files: string[] = [];
  while (args.length) {
    const arg = args.shift()!;
    if (arg === "--out") {
      out = args.shift() ?? "";
    } else if (arg === "--ref") {
      ref = Number(args.shift());
    } else {
      files.push(arg);
    }
  }
  if (!out || files.length === 0) {
    console.error("need --out and at least one CSV input");
    return 2;
  }
  try {
    const inputs: PlotInput[] = files.map((f) => ({
      label: basename(f).replace(/\.csv$/, ""),
      table: parseCsv(readFileSync(f, "utf8")),
    }));
    writeFileSync(out, render(kind as PlotKind, inputs, ref));
    console.log(`wrote ${out}`);
    return 0;
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    return 1;
  }
}

process.exit(main(process.argv.slice(2)));
