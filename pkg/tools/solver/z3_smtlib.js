#!/usr/bin/env node
// SMT-LIB v2 command-line front end for the WebAssembly build of Z3.
//
// Reads a script from the file given as the first argument (or stdin when
// absent or "-"), evaluates it with Z3 and prints the solver output:
// sat/unsat/unknown followed by the model block when one was requested.
// Drop-in stand-in for a native z3 binary where only package managers are
// available.
"use strict";

const fs = require("fs");
const { init } = require("z3-solver");

async function main() {
  const arg = process.argv[2];
  const source =
    arg && arg !== "-" ? fs.readFileSync(arg, "utf8") : fs.readFileSync(0, "utf8");
  const { Z3, em } = await init();
  const cfg = Z3.mk_config();
  const ctx = Z3.mk_context(cfg);
  let out;
  try {
    out = await Z3.eval_smtlib2_string(ctx, source);
  } catch (err) {
    process.stderr.write(String(err) + "\n");
    em.PThread.terminateAllThreads();
    process.exit(1);
  }
  process.stdout.write(out.endsWith("\n") || out === "" ? out : out + "\n");
  em.PThread.terminateAllThreads();
  process.exit(0);
}

main();
