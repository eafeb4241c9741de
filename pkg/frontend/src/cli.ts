#!/usr/bin/env node
/**
 * moelab-plot: render the lab's report CSVs into the standard figures.
 *
 *   moelab-plot render --kind loss-curve --in report/loss_curve.csv --out loss.svg
 *   moelab-plot render --kind fanout --in fanout_position.csv fanout_loss.csv --out fanout.svg
 *
 * Exits 1 on schema mismatches (with a column diff) and writes nothing.
 */

import yargs from "yargs";
import { hideBin } from "yargs/helpers";
import { PLOT_KINDS } from "./schemas";
import { render } from "./render";

async function main(): Promise<number> {
  const argv = await yargs(hideBin(process.argv))
    .command("render", "render one figure from CSV inputs", (y) =>
      y
        .option("kind", {
          type: "string",
          demandOption: true,
          choices: Object.keys(PLOT_KINDS),
          describe: "figure family",
        })
        .option("in", {
          type: "string",
          array: true,
          demandOption: true,
          describe: "input CSV path(s), in schema order",
        })
        .option("out", { type: "string", demandOption: true, describe: "output SVG path" })
        .option("title", { type: "string", default: undefined })
        .option("width", { type: "number", default: 960 })
        .option("height", { type: "number", default: 560 })
    )
    .demandCommand(1)
    .strict()
    .parse();

  if (argv._[0] !== "render") {
    console.error(`unknown command ${argv._[0]}`);
    return 2;
  }
  try {
    render({
      kind: argv.kind as string,
      inputs: argv.in as string[],
      out: argv.out as string,
      title: argv.title as string | undefined,
      width: argv.width as number,
      height: argv.height as number,
    });
    console.log(`wrote ${argv.out}`);
    return 0;
  } catch (err) {
    console.error(err instanceof Error ? err.message : String(err));
    return 1;
  }
}

main().then((code) => {
  if (code !== 0) process.exit(code);
});
