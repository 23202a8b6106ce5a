// SPDX-License-Identifier: Apache-2.0
// Writes a synthetic forum dump plus the mock script and base manifest
// that go with it, for trying the pipeline offline.
#include <iostream>

#include "CLI11.hpp"
#include "prime/json_io.hpp"
#include "providers.hpp"
#include "synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate an offline demo corpus", "prime_synth_dump"};
  prime::testing::SyntheticSpec spec;
  std::string out_dir;
  app.add_option("--out", out_dir, "Output directory")->required();
  app.add_option("--authors", spec.authors, "Active authors");
  app.add_option("--history-ops", spec.history_ops, "History posts per active author");
  app.add_option("--eval-ops", spec.eval_ops, "Post-cutoff posts per author");
  app.add_option("--replies", spec.replies_per_op, "Direct replies per post");
  app.add_option("--seed", spec.seed, "Generator seed");
  app.add_option("--total", spec.total_submissions, "Pad the dump to this many lines");
  CLI11_PARSE(app, argc, argv);

  try {
    const std::filesystem::path out = out_dir;
    prime::testing::write_dump(out / "dump.jsonl", prime::testing::generate_dump(spec));
    prime::write_file_atomic(out / "mock_script.json", prime::testing::gold_mock_script_json());
    prime::Json manifest;
    manifest["model"] = "tiny-demo";
    manifest["weights"] = {{"layers.0.attn.q_proj", {8, 8}}, {"layers.0.attn.v_proj", {8, 8}}};
    prime::write_file_atomic(out / "base_manifest.json", prime::dump_pretty(manifest));
    std::cout << "wrote " << (out / "dump.jsonl").string() << ", mock_script.json, base_manifest.json\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
