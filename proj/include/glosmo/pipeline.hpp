#pragma once

// End-to-end commands behind the CLI: corpus generation, the two training
// stages, text-to-motion generation, evaluation with a recognizer gate, and
// the ablation sweeps. Every command writes a run.json manifest listing the
// exact inputs and outputs with content hashes; nothing records wall-clock
// time, so reruns with the same config produce identical artifacts.

#include <glosmo/config.hpp>
#include <glosmo/conditioning.hpp>
#include <glosmo/dataset.hpp>
#include <glosmo/denoiser.hpp>
#include <glosmo/evaluation.hpp>
#include <glosmo/plot.hpp>
#include <glosmo/pvqvae.hpp>
#include <glosmo/serialize.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace glosmo {

namespace detail {

inline json file_entry(const std::string& path) {
  return {{"path", path}, {"fnv64", hex64(file_fnv1a64(path))}};
}

inline void write_run_manifest(const std::string& out_dir, const std::string& command,
                               const RunConfig& cfg, const json& inputs, const json& outputs) {
  json manifest = {{"command", command},
                   {"config", run_config_to_json(cfg)},
                   {"config_hash", run_config_hash(cfg)},
                   {"inputs", inputs},
                   {"outputs", outputs}};
  write_json_file((std::filesystem::path(out_dir) / "run.json").string(), manifest);
}

inline void write_train_stats(const std::string& out_dir, const TrainStats& stats) {
  write_json_file((std::filesystem::path(out_dir) / "train_stats.json").string(),
                  json{{"epoch_loss", stats.epoch_loss}});
}

}  // namespace detail

// ---- data ----

inline void run_gen_data(const RunConfig& cfg, const std::string& out_dir) {
  SkeletonSpec sk;
  GlossVocab vocab = make_vocab(cfg.data.vocab_size, sk, cfg.seed);

  CorpusParams cp;
  cp.min_glosses = cfg.data.min_glosses;
  cp.max_glosses = cfg.data.max_glosses;
  cp.min_span = cfg.data.min_span;
  cp.max_span = cfg.data.max_span;
  cp.render.noise_scale = cfg.data.noise_scale;
  cp.render.max_frames = cfg.data.max_frames;

  cp.n_samples = cfg.data.n_train;
  auto train = generate_corpus(vocab, cp, cfg.seed + 1, "tr");
  cp.n_samples = cfg.data.n_test;
  auto test = generate_corpus(vocab, cp, cfg.seed + 2, "te");

  auto train_dir = (std::filesystem::path(out_dir) / "train").string();
  auto test_dir = (std::filesystem::path(out_dir) / "test").string();
  write_dataset(train_dir, vocab, train);
  write_dataset(test_dir, vocab, test);

  detail::write_run_manifest(
      out_dir, "gen-data", cfg, json::object(),
      {{"train", detail::file_entry(train_dir + "/manifest.json")},
       {"test", detail::file_entry(test_dir + "/manifest.json")}});
}

// ---- tokenizer training ----

inline void run_train_pvqvae(const RunConfig& cfg, const std::string& data_dir,
                             const std::string& out_dir) {
  Dataset train = read_dataset((std::filesystem::path(data_dir) / "train").string());
  auto model = PvqVae<float>::create(cfg.pvqvae.model, train.vocab.skeleton, cfg.seed);

  PvqVaeTrainConfig tc;
  tc.epochs = cfg.pvqvae.epochs;
  tc.batch_size = cfg.pvqvae.batch_size;
  tc.lr = cfg.pvqvae.lr;
  tc.seed = cfg.seed;
  tc.dead_code_batches = cfg.pvqvae.dead_code_batches;
  TrainStats stats = train_pvqvae(model, train.samples, tc);

  save_pvqvae(model, out_dir);
  detail::write_train_stats(out_dir, stats);
  detail::write_run_manifest(
      out_dir, "train-pvqvae", cfg,
      {{"train", detail::file_entry(data_dir + "/train/manifest.json")}},
      {{"checkpoint", detail::file_entry(out_dir + "/checkpoint.json")},
       {"arrays", detail::file_entry(out_dir + "/arrays.bin")}});
}

// ---- denoiser training ----

inline DenoiserConfig assemble_denoiser_config(const RunConfig& cfg, int vocab_size) {
  DenoiserConfig dc = cfg.denoiser.model;
  dc.K = cfg.pvqvae.model.K;
  dc.T = cfg.diffusion.T;
  dc.vocab_size = vocab_size;
  dc.validate();
  return dc;
}

inline void run_train_denoiser(const RunConfig& cfg, const std::string& data_dir,
                               const std::string& pvqvae_dir, const std::string& out_dir) {
  Dataset train = read_dataset((std::filesystem::path(data_dir) / "train").string());
  auto vae = load_pvqvae<float>(pvqvae_dir);
  if (vae.cfg.K != cfg.pvqvae.model.K || vae.cfg.r != cfg.pvqvae.model.r)
    throw config_error("pvqvae", "checkpoint disagrees with the config (K or r)");

  auto tokenized = tokenize_dataset(vae, train.samples);
  LengthStats lstats = LengthStats::fit(train.samples);
  DiffusionSchedule sched = build_schedule(cfg.diffusion.T, vae.cfg.K, cfg.diffusion.gamma_final);

  auto model = DenoiserModel<float>::create(
      assemble_denoiser_config(cfg, static_cast<int>(train.vocab.entries.size())), cfg.seed);

  DenoiserTrainConfig tc;
  tc.epochs = cfg.denoiser.epochs;
  tc.batch_size = cfg.denoiser.batch_size;
  tc.lr = cfg.denoiser.lr;
  tc.seed = cfg.seed;
  tc.aux_weight = cfg.denoiser.aux_weight;
  tc.r = vae.cfg.r;
  tc.n_threads = cfg.denoiser.n_threads;
  TrainStats stats = train_denoiser(model, tokenized, sched, tc);

  json vae_ckpt = read_json_file((std::filesystem::path(pvqvae_dir) / "checkpoint.json").string());
  save_denoiser(model, sched, lstats, out_dir, vae_ckpt.at("config_hash").get<std::string>());
  detail::write_train_stats(out_dir, stats);
  detail::write_run_manifest(
      out_dir, "train-denoiser", cfg,
      {{"train", detail::file_entry(data_dir + "/train/manifest.json")},
       {"pvqvae", detail::file_entry(pvqvae_dir + "/checkpoint.json")}},
      {{"checkpoint", detail::file_entry(out_dir + "/checkpoint.json")},
       {"arrays", detail::file_entry(out_dir + "/arrays.bin")}});
}

// ---- generation ----

struct GenerationResult {
  std::vector<int> glosses;
  std::vector<int> lengths;
  std::array<std::vector<int>, 4> tokens;
  MatF motion;
};

// One text-to-motion pass through the trained stack. reference_lengths is
// consulted only when the config says length_source=reference.
inline GenerationResult generate_motion(const RunConfig& cfg, const LoadedDenoiser<float>& den,
                                        const PvqVae<float>& vae, const std::vector<int>& glosses,
                                        const std::vector<int>& reference_lengths, Rng& rng) {
  if (glosses.empty()) throw std::invalid_argument("generate_motion: no glosses");
  GenerationResult out;
  out.glosses = glosses;
  if (cfg.generate.length_source == "reference") {
    if (reference_lengths.size() != glosses.size())
      throw std::invalid_argument("generate_motion: reference lengths unavailable");
    out.lengths = reference_lengths;
  } else {
    out.lengths = predict_lengths(glosses, den.length_stats, cfg.data.max_frames);
  }
  for (int& l : out.lengths) l = std::max(vae.cfg.r, l + cfg.generate.length_delta);

  long total = 0;
  for (int l : out.lengths) total += l;
  int latent_len = static_cast<int>(total) / vae.cfg.r;
  if (latent_len < 1) throw std::invalid_argument("generate_motion: clip too short");

  MatF table = den.model.store.value(den.model.gloss_embed);
  ConditionGrid cond =
      build_condition_values(table, den.model.cfg.condition, glosses, out.lengths, vae.cfg.r);

  auto gen = generate_tokens(den.model, den.schedule, cond, glosses, latent_len, rng,
                             cfg.generate.temperature);
  out.tokens = gen.tokens;

  MatF motion(latent_len * vae.cfg.r, vae.skeleton.total_channels());
  for (Part p : kParts) {
    MatF part = pvqvae_decode_tokens(vae, p, gen.tokens[static_cast<std::size_t>(p)]);
    motion.block(0, vae.skeleton.channel_offset(p), motion.rows(), part.cols()) = part;
  }
  out.motion = std::move(motion);
  return out;
}

inline void run_generate(const RunConfig& cfg, const std::string& denoiser_dir,
                         const std::string& pvqvae_dir, const std::string& vocab_dir,
                         const std::string& text, const std::string& out_dir) {
  auto den = load_denoiser<float>(denoiser_dir);
  auto vae = load_pvqvae<float>(pvqvae_dir);
  GlossVocab vocab = read_dataset_vocab(vocab_dir);

  std::vector<int> glosses = text_to_gloss(text, vocab);
  Rng rng(cfg.seed);
  GenerationResult gen = generate_motion(cfg, den, vae, glosses, {}, rng);

  std::filesystem::create_directories(out_dir);
  auto motion_path = (std::filesystem::path(out_dir) / "motion.bin").string();
  write_motion_file(motion_path, gen.motion);
  json tokens_j = json::array();
  for (Part p : kParts) tokens_j.push_back(gen.tokens[static_cast<std::size_t>(p)]);
  write_json_file((std::filesystem::path(out_dir) / "generation.json").string(),
                  {{"text", text},
                   {"glosses", gen.glosses},
                   {"lengths", gen.lengths},
                   {"frames", gen.motion.rows()},
                   {"tokens", std::move(tokens_j)}});
  detail::write_run_manifest(
      out_dir, "generate", cfg,
      {{"denoiser", detail::file_entry(denoiser_dir + "/checkpoint.json")},
       {"pvqvae", detail::file_entry(pvqvae_dir + "/checkpoint.json")},
       {"vocab", detail::file_entry(vocab_dir + "/manifest.json")}},
      {{"motion", detail::file_entry(motion_path)},
       {"generation", detail::file_entry(out_dir + "/generation.json")}});
}

// ---- evaluation ----

struct EvalSummary {
  int n_samples = 0;
  double frame_accuracy = 0.0;  // recognizer on ground-truth test motion
  double gt_wer = 0.0;          // back-translation of ground truth
  double wer = 0.0;
  double bleu = 0.0;
  double rouge = 0.0;
  double dtw_body = 0.0;
  double dtw_hands = 0.0;
  double dtw_all = 0.0;
  double alignment = 0.0;
  double coordination = 0.0;
  double coordination_ref = 0.0;
};

inline json eval_summary_to_json(const EvalSummary& s) {
  return {{"n_samples", s.n_samples},
          {"frame_accuracy", s.frame_accuracy},
          {"gt_wer", s.gt_wer},
          {"wer", s.wer},
          {"bleu", s.bleu},
          {"rouge", s.rouge},
          {"dtw_body", s.dtw_body},
          {"dtw_hands", s.dtw_hands},
          {"dtw_all", s.dtw_all},
          {"alignment", s.alignment},
          {"coordination", s.coordination},
          {"coordination_ref", s.coordination_ref}};
}

// Loads the cached recognizer or trains one on the train split. The gate
// below refuses to score generations with an unreliable reader.
inline Recognizer obtain_recognizer(const RunConfig& cfg, const std::string& data_dir,
                                    const std::string& cache_dir) {
  if (std::filesystem::exists(std::filesystem::path(cache_dir) / "checkpoint.json"))
    return load_recognizer(cache_dir);
  Dataset train = read_dataset((std::filesystem::path(data_dir) / "train").string());
  RecognizerConfig rc;
  rc.window = cfg.recognizer.window;
  rc.hidden = cfg.recognizer.hidden;
  rc.vocab = static_cast<int>(train.vocab.entries.size());
  rc.channels = train.vocab.skeleton.total_channels();
  Recognizer rec = Recognizer::create(rc, cfg.seed);
  RecognizerTrainConfig tc;
  tc.epochs = cfg.recognizer.epochs;
  tc.batch_size = cfg.recognizer.batch_size;
  tc.lr = cfg.recognizer.lr;
  tc.seed = cfg.seed;
  train_recognizer(rec, train.samples, tc);
  save_recognizer(rec, cache_dir);
  return rec;
}

inline EvalSummary run_eval(const RunConfig& cfg, const std::string& data_dir,
                            const std::string& pvqvae_dir, const std::string& denoiser_dir,
                            const std::string& recognizer_dir, const std::string& out_dir) {
  Dataset test = read_dataset((std::filesystem::path(data_dir) / "test").string());
  auto vae = load_pvqvae<float>(pvqvae_dir);
  auto den = load_denoiser<float>(denoiser_dir);
  std::string rec_dir = recognizer_dir.empty()
                            ? (std::filesystem::path(out_dir) / "recognizer").string()
                            : recognizer_dir;
  Recognizer rec = obtain_recognizer(cfg, data_dir, rec_dir);

  EvalSummary sum;
  sum.n_samples = static_cast<int>(test.samples.size());

  // gate: the recognizer must read ground truth nearly perfectly, otherwise
  // its verdict on generated motion is meaningless
  sum.frame_accuracy = frame_accuracy(rec, test.samples);
  std::vector<EditCounts> gt_counts;
  for (const auto& s : test.samples)
    gt_counts.push_back(edit_counts(back_translate(rec, s.motion, cfg.eval.min_run), s.glosses));
  sum.gt_wer = corpus_wer(gt_counts);
  if (sum.frame_accuracy < cfg.eval.gate_frame_accuracy || sum.gt_wer > cfg.eval.gate_wer)
    throw eval_gate_error("recognizer gate failed: frame accuracy " +
                          std::to_string(sum.frame_accuracy) + " (need >= " +
                          std::to_string(cfg.eval.gate_frame_accuracy) + "), ground-truth wer " +
                          std::to_string(sum.gt_wer) + " (need <= " +
                          std::to_string(cfg.eval.gate_wer) + ")");

  TemplateBank bank = TemplateBank::build(test.vocab);

  std::vector<EditCounts> wer_counts;
  NgramStats bleu_pool;
  std::vector<std::vector<std::string>> rows;
  Rng rng(cfg.seed + 17);
  for (const auto& s : test.samples) {
    std::vector<int> glosses = text_to_gloss(s.text, test.vocab);
    std::vector<int> ref_lengths;
    for (const auto& [b, e] : s.spans) ref_lengths.push_back(e - b);
    GenerationResult gen = generate_motion(cfg, den, vae, glosses, ref_lengths, rng);

    std::vector<int> readback = back_translate(rec, gen.motion, cfg.eval.min_run);
    EditCounts ec = edit_counts(readback, s.glosses);
    wer_counts.push_back(ec);
    NgramStats ns = bleu_stats(readback, s.glosses);
    bleu_pool.add(ns);
    double rouge = rouge_l(readback, s.glosses);
    double d_body = dtw_jpe(gen.motion, s.motion, test.vocab.skeleton, JointSubset::body).mean_cost;
    double d_hands =
        dtw_jpe(gen.motion, s.motion, test.vocab.skeleton, JointSubset::hands).mean_cost;
    double d_all = dtw_jpe(gen.motion, s.motion, test.vocab.skeleton, JointSubset::all).mean_cost;
    double align =
        alignment_accuracy(gen.motion, glosses, s.spans, s.length(), bank, cfg.eval.trim);
    double coord = coordination_error(gen.motion, test.vocab.skeleton);
    double coord_ref = coordination_error(s.motion, test.vocab.skeleton);

    sum.rouge += rouge;
    sum.dtw_body += d_body;
    sum.dtw_hands += d_hands;
    sum.dtw_all += d_all;
    sum.alignment += align;
    sum.coordination += coord;
    sum.coordination_ref += coord_ref;

    rows.push_back({s.sample_id, std::to_string(static_cast<double>(ec.edits) / ec.ref_len),
                    std::to_string(bleu4_from_stats(ns)), std::to_string(rouge),
                    std::to_string(d_body), std::to_string(d_hands), std::to_string(d_all),
                    std::to_string(align), std::to_string(coord),
                    std::to_string(gen.motion.rows()), std::to_string(s.length())});
  }

  double n = static_cast<double>(sum.n_samples);
  sum.wer = corpus_wer(wer_counts);
  sum.bleu = bleu4_from_stats(bleu_pool);
  sum.rouge /= n;
  sum.dtw_body /= n;
  sum.dtw_hands /= n;
  sum.dtw_all /= n;
  sum.alignment /= n;
  sum.coordination /= n;
  sum.coordination_ref /= n;

  std::filesystem::create_directories(out_dir);
  write_csv((std::filesystem::path(out_dir) / "metrics.csv").string(),
            {"sample_id", "wer", "bleu4", "rouge_l", "dtw_body", "dtw_hands", "dtw_all",
             "alignment", "coordination", "gen_frames", "ref_frames"},
            rows);
  write_json_file((std::filesystem::path(out_dir) / "summary.json").string(),
                  eval_summary_to_json(sum));
  detail::write_run_manifest(
      out_dir, "eval", cfg,
      {{"test", detail::file_entry(data_dir + "/test/manifest.json")},
       {"pvqvae", detail::file_entry(pvqvae_dir + "/checkpoint.json")},
       {"denoiser", detail::file_entry(denoiser_dir + "/checkpoint.json")},
       {"recognizer", detail::file_entry(rec_dir + "/checkpoint.json")}},
      {{"metrics", detail::file_entry(out_dir + "/metrics.csv")},
       {"summary", detail::file_entry(out_dir + "/summary.json")}});
  return sum;
}

// ---- ablations ----

struct AblationRow {
  std::string variant;
  EvalSummary summary;
};

inline void write_ablation_outputs(const std::string& out_dir, const std::string& axis,
                                   const std::vector<AblationRow>& rows, const RunConfig& cfg) {
  std::vector<std::vector<std::string>> csv_rows;
  json variants = json::object();
  for (const auto& row : rows) {
    csv_rows.push_back({row.variant, std::to_string(row.summary.wer),
                        std::to_string(row.summary.bleu), std::to_string(row.summary.rouge),
                        std::to_string(row.summary.dtw_all), std::to_string(row.summary.alignment),
                        std::to_string(row.summary.coordination)});
    variants[row.variant] = eval_summary_to_json(row.summary);
  }
  write_csv((std::filesystem::path(out_dir) / ("ablate_" + axis + ".csv")).string(),
            {"variant", "wer", "bleu4", "rouge_l", "dtw_all", "alignment", "coordination"},
            csv_rows);
  write_json_file((std::filesystem::path(out_dir) / ("ablate_" + axis + ".json")).string(),
                  {{"axis", axis}, {"variants", variants}});
  detail::write_run_manifest(
      out_dir, "ablate", cfg, json::object(),
      {{"table", detail::file_entry(out_dir + "/ablate_" + axis + ".csv")},
       {"summary", detail::file_entry(out_dir + "/ablate_" + axis + ".json")}});
}

// Trains one denoiser per variant (identical data and seed) and evaluates
// them with a shared recognizer cache.
inline std::vector<AblationRow> run_ablate(const RunConfig& cfg, const std::string& data_dir,
                                           const std::string& pvqvae_dir, const std::string& axis,
                                           const std::string& out_dir) {
  std::vector<AblationRow> rows;
  std::string rec_cache = (std::filesystem::path(out_dir) / "recognizer").string();

  auto eval_variant = [&](const std::string& name, const RunConfig& vcfg,
                          const std::string& denoiser_dir) {
    auto eval_dir = (std::filesystem::path(out_dir) / name / "eval").string();
    rows.push_back({name, run_eval(vcfg, data_dir, pvqvae_dir, denoiser_dir, rec_cache, eval_dir)});
  };

  if (axis == "fusion") {
    struct Variant {
      const char* name;
      FusionMode fusion;
      ConditionKind condition;
    };
    for (const Variant& v :
         {Variant{"tac", FusionMode::tac, ConditionKind::gloss},
          Variant{"sentence", FusionMode::tac, ConditionKind::sentence},
          Variant{"cross_attention", FusionMode::cross_attention, ConditionKind::gloss},
          Variant{"adaln_fc", FusionMode::adaln_fc, ConditionKind::gloss}}) {
      RunConfig vcfg = cfg;
      vcfg.denoiser.model.fusion = v.fusion;
      vcfg.denoiser.model.condition = v.condition;
      auto den_dir = (std::filesystem::path(out_dir) / v.name / "denoiser").string();
      run_train_denoiser(vcfg, data_dir, pvqvae_dir, den_dir);
      eval_variant(v.name, vcfg, den_dir);
    }
  } else if (axis == "ipa") {
    for (IpaMode mode : {IpaMode::none, IpaMode::b2h, IpaMode::h2b, IpaMode::both}) {
      RunConfig vcfg = cfg;
      vcfg.denoiser.model.ipa = mode;
      auto den_dir = (std::filesystem::path(out_dir) / ipa_name(mode) / "denoiser").string();
      run_train_denoiser(vcfg, data_dir, pvqvae_dir, den_dir);
      eval_variant(ipa_name(mode), vcfg, den_dir);
    }
  } else if (axis == "length") {
    // one model, probed at several offsets from the predicted lengths
    auto den_dir = (std::filesystem::path(out_dir) / "base" / "denoiser").string();
    run_train_denoiser(cfg, data_dir, pvqvae_dir, den_dir);
    for (int delta : {-4, -2, 0, 2, 4, 8}) {
      RunConfig vcfg = cfg;
      vcfg.generate.length_delta = delta;
      std::string name = "delta_" + std::to_string(delta);
      eval_variant(name, vcfg, den_dir);
    }
  } else {
    throw config_error("axis", "unknown ablation axis: " + axis);
  }

  write_ablation_outputs(out_dir, axis, rows, cfg);
  return rows;
}

// ---- plots ----

inline void run_plot(const std::string& csv_path, const std::string& out_png) {
  write_line_plot_png(out_png, load_plot_table(csv_path));
}

}  // namespace glosmo
