#pragma once

namespace lord {

// Experiment driver entry point. Subcommands: gen-data, train-base, finetune,
// eval-ol, eval-cl, ablate, report. Exit codes: 0 success, 2 config error,
// 3 data error, 4 numerical failure.
int run_cli(int argc, const char* const* argv);

}  // namespace lord
