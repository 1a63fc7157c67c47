#pragma once

// Command line front end. Every subcommand takes --config (JSON, defaults
// apply when omitted), repeatable --set section.key=value overrides and
// --seed. Exit codes tell scripts what went wrong:
//   0 success          4 training diverged
//   2 bad config       5 recognizer gate failed
//   3 missing input    6 corrupt or foreign file
//   7 bad argument     1 anything else

#include <glosmo/config.hpp>
#include <glosmo/pipeline.hpp>

#include <CLI11.hpp>

#include <cstdio>
#include <string>
#include <vector>

namespace glosmo {

inline int cli_main(int argc, char** argv) {
  CLI::App app{"part-aware discrete diffusion over motion tokens"};
  app.require_subcommand(1);

  std::string config_path, data_dir, pvqvae_dir, denoiser_dir, vocab_dir, recognizer_dir;
  std::string out_dir, text, axis, csv_path;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  bool seed_set = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "run configuration JSON");
    sub->add_option("--set", overrides, "override, e.g. denoiser.epochs=5")->take_all();
    sub->add_option("--seed", seed, "override config seed")->each([&](const std::string&) {
      seed_set = true;
    });
  };

  CLI::App* gen_data = app.add_subcommand("gen-data", "render a synthetic corpus");
  add_common(gen_data);
  gen_data->add_option("--out", out_dir, "output directory")->required();

  CLI::App* train_vq = app.add_subcommand("train-pvqvae", "train the part-wise tokenizer");
  add_common(train_vq);
  train_vq->add_option("--data", data_dir, "dataset directory (train/ + test/)")->required();
  train_vq->add_option("--out", out_dir, "checkpoint directory")->required();

  CLI::App* train_den = app.add_subcommand("train-denoiser", "train the token denoiser");
  add_common(train_den);
  train_den->add_option("--data", data_dir, "dataset directory")->required();
  train_den->add_option("--pvqvae", pvqvae_dir, "tokenizer checkpoint")->required();
  train_den->add_option("--out", out_dir, "checkpoint directory")->required();

  CLI::App* generate = app.add_subcommand("generate", "text to motion");
  add_common(generate);
  generate->add_option("--denoiser", denoiser_dir, "denoiser checkpoint")->required();
  generate->add_option("--pvqvae", pvqvae_dir, "tokenizer checkpoint")->required();
  generate->add_option("--vocab", vocab_dir, "dataset directory holding the vocabulary")
      ->required();
  generate->add_option("--text", text, "input sentence")->required();
  generate->add_option("--out", out_dir, "output directory")->required();

  CLI::App* eval = app.add_subcommand("eval", "score generations against the test split");
  add_common(eval);
  eval->add_option("--data", data_dir, "dataset directory")->required();
  eval->add_option("--pvqvae", pvqvae_dir, "tokenizer checkpoint")->required();
  eval->add_option("--denoiser", denoiser_dir, "denoiser checkpoint")->required();
  eval->add_option("--recognizer", recognizer_dir, "recognizer cache directory");
  eval->add_option("--out", out_dir, "output directory")->required();

  CLI::App* ablate = app.add_subcommand("ablate", "sweep one design axis");
  add_common(ablate);
  ablate->add_option("--data", data_dir, "dataset directory")->required();
  ablate->add_option("--pvqvae", pvqvae_dir, "tokenizer checkpoint")->required();
  ablate->add_option("--axis", axis, "fusion, ipa or length")->required();
  ablate->add_option("--out", out_dir, "output directory")->required();

  CLI::App* plot = app.add_subcommand("plot", "render a csv as a png line chart");
  plot->add_option("--csv", csv_path, "input table")->required();
  plot->add_option("--out", out_dir, "output png path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (plot->parsed()) {
      run_plot(csv_path, out_dir);
      return 0;
    }
    RunConfig cfg = load_run_config(config_path, overrides);
    if (seed_set) cfg.seed = seed;

    if (gen_data->parsed()) {
      run_gen_data(cfg, out_dir);
    } else if (train_vq->parsed()) {
      run_train_pvqvae(cfg, data_dir, out_dir);
    } else if (train_den->parsed()) {
      run_train_denoiser(cfg, data_dir, pvqvae_dir, out_dir);
    } else if (generate->parsed()) {
      run_generate(cfg, denoiser_dir, pvqvae_dir, vocab_dir, text, out_dir);
    } else if (eval->parsed()) {
      EvalSummary sum = run_eval(cfg, data_dir, pvqvae_dir, denoiser_dir, recognizer_dir, out_dir);
      std::printf("n=%d wer=%.4f bleu4=%.4f rouge_l=%.4f dtw_all=%.4f alignment=%.4f\n",
                  sum.n_samples, sum.wer, sum.bleu, sum.rouge, sum.dtw_all, sum.alignment);
    } else if (ablate->parsed()) {
      auto rows = run_ablate(cfg, data_dir, pvqvae_dir, axis, out_dir);
      for (const auto& row : rows)
        std::printf("%s wer=%.4f alignment=%.4f coordination=%.5f\n", row.variant.c_str(),
                    row.summary.wer, row.summary.alignment, row.summary.coordination);
    }
    return 0;
  } catch (const config_error& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const dependency_error& e) {
    std::fprintf(stderr, "missing input: %s\n", e.what());
    return 3;
  } catch (const training_error& e) {
    std::fprintf(stderr, "training failed: %s\n", e.what());
    return 4;
  } catch (const eval_gate_error& e) {
    std::fprintf(stderr, "evaluation gate: %s\n", e.what());
    return 5;
  } catch (const corruption_error& e) {
    std::fprintf(stderr, "corrupt file: %s\n", e.what());
    return 6;
  } catch (const format_error& e) {
    std::fprintf(stderr, "unrecognized format: %s\n", e.what());
    return 6;
  } catch (const unknown_gloss_error& e) {
    std::fprintf(stderr, "unknown gloss: %s\n", e.what());
    return 7;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "invalid argument: %s\n", e.what());
    return 7;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

}  // namespace glosmo
