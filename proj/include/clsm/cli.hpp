#pragma once

// Command-line front end. run_cli() is the whole program; tools/clsm.cpp only
// forwards argv. Exit codes: 0 success, 1 runtime failure, 2 usage error or
// invalid span.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "clsm/checkpoint.hpp"
#include "clsm/config.hpp"
#include "clsm/corpus.hpp"
#include "clsm/corpus_build.hpp"
#include "clsm/errors.hpp"
#include "clsm/lm.hpp"
#include "clsm/metrics.hpp"
#include "clsm/model.hpp"
#include "clsm/sampler.hpp"
#include "clsm/service.hpp"
#include "clsm/service_http.hpp"
#include "clsm/toy_corpus.hpp"
#include "clsm/training.hpp"
#include "clsm/vae.hpp"

namespace clsm::cli {

namespace fs = std::filesystem;

class UsageError : public Error {
 public:
  using Error::Error;
};

inline std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("not an integer list: " + text);
    }
  }
  if (out.empty()) throw UsageError("empty integer list");
  return out;
}

inline TokenSeq read_context(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot read context file " + path.string());
  std::string line;
  while (std::getline(in, line)) {
    auto seq = from_text(line);
    if (!seq.empty()) return seq;
  }
  throw InvalidInput("context file holds no tokens: " + path.string());
}

// A loaded checkpoint of either generative model family.
struct Generator {
  std::string kind;
  std::unique_ptr<ClsmModel<float>> clsm;
  std::unique_ptr<VaeModel<float>> vae;

  SpanGrid grid() const {
    if (clsm) return clsm->config().grid();
    return vae->config().grid();
  }
  int K() const { return clsm ? clsm->config().K : vae->config().K; }
};

inline Generator load_generator(const fs::path& path) {
  const auto c = checkpoint::read(path);
  Generator g;
  g.kind = c.kind();
  if (g.kind == "clsm") {
    g.clsm = std::make_unique<ClsmModel<float>>(model_config_from_json(c.header.at("model")));
    checkpoint::load_into(g.clsm->params(), c);
  } else if (g.kind == "vae") {
    g.vae = std::make_unique<VaeModel<float>>(vae_config_from_json(c.header.at("model")));
    checkpoint::load_into(g.vae->params(), c);
  } else {
    throw CheckpointError("checkpoint kind '" + g.kind + "' cannot generate");
  }
  return g;
}

inline RunConfig run_config(const std::string& preset, const std::string& config_path) {
  RunConfig base;
  if (preset == "toy") {
    base.model = ModelConfig::toy();
  } else if (preset != "paper") {
    throw UsageError("unknown preset '" + preset + "' (paper or toy)");
  }
  return config_path.empty() ? (base.validate(), base) : load_config(config_path, base);
}

inline void write_records(const fs::path& path, const std::vector<nlohmann::json>& records) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot write " + path.string());
  for (const auto& r : records) out << r.dump() << '\n';
}

inline std::vector<TokenSeq> limited(std::vector<TokenSeq> v, int limit) {
  if (limit > 0 && v.size() > static_cast<std::size_t>(limit)) v.resize(static_cast<std::size_t>(limit));
  return v;
}

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Contextual latent space model for melody infilling", "clsm"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  std::function<void()> action;

  // ---- corpus -------------------------------------------------------------
  auto* corpus_cmd = app.add_subcommand("corpus", "build, inspect or synthesise corpora");
  corpus_cmd->require_subcommand(1);

  std::string input_dir, out_dir, corpus_dir;
  bool no_midi_transpose = false, transpose_tokens = false;
  auto* build = corpus_cmd->add_subcommand("build", "windows, splits and manifest from MIDI or token text");
  build->add_option("--input", input_dir, "directory of .mid/.midi/.txt/.tok files")->required();
  build->add_option("--out", out_dir, "output directory for manifest.jsonl")->required();
  build->add_option("--seed", seed, "split seed");
  build->add_flag("--no-transpose", no_midi_transpose, "do not transpose MIDI tracks to every key");
  build->add_flag("--transpose-tokens", transpose_tokens, "also transpose token text tracks");
  build->callback([&] {
    action = [&] {
      corpus::BuildOptions opt{seed, !no_midi_transpose, transpose_tokens};
      corpus::BuildReport rep;
      const auto m = corpus::build_corpus(input_dir, opt, &rep);
      fs::create_directories(out_dir);
      corpus::write_manifest(m, fs::path(out_dir) / "manifest.jsonl");
      out << "files " << rep.files << ", tracks " << rep.tracks << ", windows " << rep.windows << '\n';
      corpus::print_stats(m, out);
    };
  });

  auto* stats = corpus_cmd->add_subcommand("stats", "split sizes and token frequencies");
  stats->add_option("--corpus", corpus_dir, "corpus directory or manifest")->required();
  stats->callback([&] { action = [&] { corpus::print_stats(corpus::load_corpus(corpus_dir), out); }; });

  corpus::ToyOptions toy_opt;
  auto* toy = corpus_cmd->add_subcommand("toy", "write the synthetic scale/arpeggio corpus as token text");
  toy->add_option("--out", out_dir, "output directory")->required();
  toy->add_option("--songs", toy_opt.songs, "number of songs")->check(CLI::PositiveNumber);
  toy->add_option("--bars", toy_opt.bars, "bars per song")->check(CLI::Range(8, 1024));
  toy->add_option("--seed", toy_opt.seed, "generator seed");
  toy->callback([&] {
    action = [&] {
      const auto n = corpus::write_toy_corpus(out_dir, toy_opt);
      out << "wrote " << toy_opt.songs << " songs, " << n << " windows to " << out_dir << '\n';
    };
  });

  // ---- train --------------------------------------------------------------
  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd->require_subcommand(1);
  std::string config_path, preset = "paper";
  std::optional<std::uint64_t> train_seed;
  bool quiet = false;
  const auto add_train_options = [&](CLI::App* c) {
    c->add_option("--corpus", corpus_dir, "corpus directory or manifest")->required();
    c->add_option("--config", config_path, "key = value config file");
    c->add_option("--preset", preset, "base hyperparameters: paper or toy");
    c->add_option("--out", out_dir, "run directory")->required();
    c->add_option("--seed", train_seed, "overrides the config seed");
    c->add_flag("--quiet", quiet, "no progress output");
  };
  const auto training_setup = [&] {
    RunConfig rc = run_config(preset, config_path);
    if (train_seed) rc.train.seed = *train_seed;
    return rc;
  };
  const auto report_fit = [&](const FitResult& r) {
    const auto& first = r.validation.front().loss;
    const auto& last = r.validation.back().loss;
    out << "validation rec " << first.rec << " -> " << last.rec << ", best total " << r.best_validation << '\n'
        << "checkpoints: " << r.best_checkpoint.string() << ", " << r.final_checkpoint.string() << '\n';
  };

  auto* train_clsm = train_cmd->add_subcommand("clsm", "contextual latent space model");
  add_train_options(train_clsm);
  train_clsm->callback([&] {
    action = [&] {
      const RunConfig rc = training_setup();
      const auto corpus = corpus::load_corpus(corpus_dir);
      ClsmModel<float> m(rc.model, rc.train.seed);
      report_fit(fit_clsm(m, corpus, rc.train, out_dir, quiet ? nullptr : &out));
    };
  });
  auto* train_vae = train_cmd->add_subcommand("vae", "VAE baseline");
  add_train_options(train_vae);
  train_vae->callback([&] {
    action = [&] {
      const RunConfig rc = training_setup();
      const auto corpus = corpus::load_corpus(corpus_dir);
      VaeModel<float> m(VaeConfig::like(rc.model), rc.train.seed);
      report_fit(fit_vae(m, corpus, rc.train, out_dir, quiet ? nullptr : &out));
    };
  });
  auto* train_lm = train_cmd->add_subcommand("lm", "evaluation language model on train-2");
  add_train_options(train_lm);
  train_lm->callback([&] {
    action = [&] {
      const RunConfig rc = training_setup();
      const auto corpus = corpus::load_corpus(corpus_dir);
      LanguageModel<float> lm(LmConfig::like(rc.model), rc.train.seed);
      report_fit(train_eval_lm(lm, corpus, rc.train, out_dir, quiet ? nullptr : &out));
    };
  });

  // ---- gradcheck ----------------------------------------------------------
  int gc_samples = 50;
  double gc_step = 1e-5, gc_tol = 1e-3;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the training gradient");
  gradcheck->add_option("--seed", seed, "model and sampling seed");
  gradcheck->add_option("--samples", gc_samples, "parameters to check")->check(CLI::PositiveNumber);
  gradcheck->add_option("--step", gc_step, "central-difference step")->check(CLI::PositiveNumber);
  gradcheck->add_option("--tolerance", gc_tol, "maximum relative error")->check(CLI::PositiveNumber);
  int gradcheck_status = 0;
  gradcheck->callback([&] {
    action = [&] {
      const auto r = clsm_gradient_check(seed, gc_samples, gc_step, gc_tol);
      out << "checked " << r.entries.size() << " parameters, max relative error " << r.max_rel_error << '\n';
      for (const auto& f : r.failures) out << "FAILED " << f << '\n';
      gradcheck_status = r.passed() ? 0 : 1;
    };
  });

  // ---- generate -----------------------------------------------------------
  std::string checkpoint_path, context_path, span_text, mode = "random", out_file;
  int J = 8;
  double delta = 1.0, temperature = 0.0;
  auto* generate = app.add_subcommand("generate", "infill a span of a context window");
  generate->add_option("--checkpoint", checkpoint_path, "clsm or vae checkpoint")->required();
  generate->add_option("--context", context_path, "token text file; first line is the window")->required();
  generate->add_option("--span", span_text, "target steps a:b (half-open)")->required();
  generate->add_option("--mode", mode, "random, interpolate or vary")
      ->check(CLI::IsMember({"random", "interpolate", "vary"}));
  generate->add_option("--J", J, "interpolation divisions")->check(CLI::PositiveNumber);
  generate->add_option("--delta", delta, "variation amount")->check(CLI::NonNegativeNumber);
  generate->add_option("--temperature", temperature, "sampling temperature (0 = argmax)")
      ->check(CLI::NonNegativeNumber);
  generate->add_option("--seed", seed, "sampling seed");
  generate->add_option("--out", out_file, "output token text, one window per line")->required();
  generate->callback([&] {
    action = [&] {
      const auto g = load_generator(checkpoint_path);
      const TargetSpan span = parse_span(span_text, g.grid());
      const TokenSeq window = read_context(context_path);
      if (static_cast<int>(window.size()) != g.K())
        throw InvalidInput("context window must hold " + std::to_string(g.K()) + " tokens");
      const auto [left, right] = contexts_of(window, span);
      nn::Rng rng(seed);
      std::vector<TokenSeq> result;
      if (g.clsm) {
        const auto& m = *g.clsm;
        DecodeOptions dec{temperature, &rng};
        const auto z1 = sample_from_prior(m, left, right, span, rng);
        if (mode == "random") {
          result.push_back(assemble(left, greedy_decode_target(m, z1, left, right, span, dec), right));
        } else if (mode == "interpolate") {
          const auto z2 = sample_from_prior(m, left, right, span, rng);
          for (const auto& z : interpolation_latents(m.flow(), z1, z2, J))
            result.push_back(assemble(left, greedy_decode_target(m, z, left, right, span, dec), right));
        } else {
          const auto zd = vary_latent(m, z1, delta, left, right, span, rng);
          result.push_back(assemble(left, greedy_decode_target(m, z1, left, right, span, dec), right));
          result.push_back(assemble(left, greedy_decode_target(m, zd, left, right, span, dec), right));
        }
      } else {
        const auto& m = *g.vae;
        const auto z1 = sample_standard_normal<float>(m.config().d_z, rng);
        if (mode == "random") {
          result.push_back(assemble(left, m.decode_after(z1, left, span.length), right));
        } else if (mode == "interpolate") {
          const auto z2 = sample_standard_normal<float>(m.config().d_z, rng);
          result = vae_interpolate(m, z1, z2, J, left, right, span);
        } else {
          const ag::RowVec<float> zd =
              z1 + static_cast<float>(delta) * sample_standard_normal<float>(m.config().d_z, rng);
          result.push_back(assemble(left, m.decode_after(z1, left, span.length), right));
          result.push_back(assemble(left, m.decode_after(zd, left, span.length), right));
        }
      }
      if (fs::path(out_file).has_parent_path()) fs::create_directories(fs::path(out_file).parent_path());
      std::ofstream os(out_file);
      if (!os) throw InvalidInput("cannot write " + out_file);
      for (const auto& x : result) os << to_text(x) << '\n';
      out << "wrote " << result.size() << " sequence(s) to " << out_file << '\n';
    };
  });

  // ---- eval ---------------------------------------------------------------
  auto* eval_cmd = app.add_subcommand("eval", "quantitative evaluation");
  eval_cmd->require_subcommand(1);
  std::string J_list = "2,4,8", lm_path, split_name = "test";
  int limit = 1000;
  const auto add_eval_options = [&](CLI::App* c) {
    c->add_option("--checkpoint", checkpoint_path, "clsm or vae checkpoint")->required();
    c->add_option("--corpus", corpus_dir, "corpus directory or manifest")->required();
    c->add_option("--split", split_name, "split to evaluate on");
    c->add_option("--limit", limit, "maximum windows (0 = all)")->check(CLI::NonNegativeNumber);
    c->add_option("--seed", seed, "sampling seed");
    c->add_option("--out", out_file, "report path (line-delimited records)");
  };
  const auto eval_windows = [&] {
    return limited(corpus::load_corpus(corpus_dir).windows(corpus::parse_split(split_name)), limit);
  };
  const auto report_path = [&](const std::string& metric) {
    return out_file.empty() ? fs::path(checkpoint_path + "." + metric + ".jsonl") : fs::path(out_file);
  };

  auto* iedr = eval_cmd->add_subcommand("iedr", "interpolation edit distance ratio R(J)");
  add_eval_options(iedr);
  iedr->add_option("--J", J_list, "comma-separated division counts");
  iedr->callback([&] {
    action = [&] {
      const auto Js = parse_int_list(J_list);
      const auto g = load_generator(checkpoint_path);
      const auto windows = eval_windows();
      const PathFn path = g.clsm ? clsm_path(*g.clsm) : vae_path(*g.vae);
      std::vector<nlohmann::json> records;
      out << "model  J  R(J)      paths  excluded_paths  zero_pairs\n";
      for (int j : Js) {
        nlohmann::json rec{{"metric", "iedr"}, {"model", g.kind}};
        try {
          const auto r = interpolation_edit_distance_ratio(path, windows, g.grid(), j, seed);
          rec.update(to_json(r));
          out << std::left << std::setw(7) << g.kind << std::setw(3) << j << std::setw(10) << r.ratio << std::setw(7)
              << r.n_paths << std::setw(16) << r.n_excluded_paths << r.n_excluded_pairs << '\n';
        } catch (const EmptyEvaluation& e) {
          rec["J"] = j;
          rec["ratio"] = nullptr;
          rec["n_paths"] = 0;
          rec["error"] = e.what();
          out << std::left << std::setw(7) << g.kind << std::setw(3) << j << "n/a (" << e.what() << ")\n";
        }
        records.push_back(rec);
      }
      write_records(report_path("iedr"), records);
      out << "report: " << report_path("iedr").string() << '\n';
    };
  });

  auto* nll = eval_cmd->add_subcommand("nll", "LM negative log-likelihood of generated windows");
  add_eval_options(nll);
  nll->add_option("--lm", lm_path, "language model checkpoint")->required();
  nll->callback([&] {
    action = [&] {
      const auto g = load_generator(checkpoint_path);
      const auto lm = load_lm<float>(lm_path);
      const auto windows = eval_windows();
      nn::Rng rng(seed);
      std::vector<TokenSeq> samples;
      for (const auto& w : windows) {
        const TargetSpan span = sample_target_span(rng, g.grid());
        const auto [left, right] = contexts_of(w, span);
        if (g.clsm) {
          const auto z = sample_from_prior(*g.clsm, left, right, span, rng);
          samples.push_back(assemble(left, greedy_decode_target(*g.clsm, z, left, right, span), right));
        } else {
          const auto z = sample_standard_normal<float>(g.vae->config().d_z, rng);
          samples.push_back(assemble(left, g.vae->decode_after(z, left, span.length), right));
        }
      }
      const double generated = lm_nll(lm, samples);
      const double reference = lm_nll(lm, windows);
      nlohmann::json rec{{"metric", "nll"},         {"model", g.kind},           {"nll", generated},
                         {"reference_nll", reference}, {"n", samples.size()}};
      write_records(report_path("nll"), {rec});
      out << "model  nll(generated)  nll(reference)  n\n"
          << std::left << std::setw(7) << g.kind << std::setw(16) << generated << std::setw(16) << reference
          << samples.size() << '\n'
          << "report: " << report_path("nll").string() << '\n';
    };
  });

  auto* recon = eval_cmd->add_subcommand("recon", "left-contextual reconstruction accuracy");
  add_eval_options(recon);
  recon->callback([&] {
    action = [&] {
      const auto g = load_generator(checkpoint_path);
      const auto windows = eval_windows();
      const double acc = g.clsm ? left_contextual_recon_accuracy(*g.clsm, windows, seed)
                                : left_contextual_recon_accuracy(*g.vae, windows, g.grid(), seed);
      nlohmann::json rec{{"metric", "recon_accuracy"}, {"model", g.kind}, {"accuracy", acc}, {"n", windows.size()}};
      write_records(report_path("recon"), {rec});
      out << "model  accuracy  n\n"
          << std::left << std::setw(7) << g.kind << std::setw(10) << acc << windows.size() << '\n'
          << "report: " << report_path("recon").string() << '\n';
    };
  });

  // ---- serve --------------------------------------------------------------
  int port = 0;
  std::string host = "127.0.0.1";
  long ttl = 3600;
  auto* serve_cmd = app.add_subcommand("serve", "HTTP inference service");
  serve_cmd->add_option("--checkpoint", checkpoint_path, "clsm checkpoint")->required();
  serve_cmd->add_option("--port", port, "listen port (default: CLSM_PORT or 8080)");
  serve_cmd->add_option("--host", host, "listen address");
  serve_cmd->add_option("--ttl", ttl, "session idle timeout in seconds")->check(CLI::PositiveNumber);
  serve_cmd->add_option("--seed", seed, "unused; accepted for uniformity");
  serve_cmd->callback([&] {
    action = [&] {
      auto model = std::make_shared<ClsmModel<float>>(load_clsm<float>(checkpoint_path));
      ServiceOptions opt;
      opt.session_ttl = std::chrono::seconds(ttl);
      opt.model_version = fs::path(checkpoint_path).filename().string();
      Service service(model, opt);
      const int p = resolve_port(port);
      out << "serving " << checkpoint_path << " on " << host << ":" << p << std::endl;
      serve(service, host, p);
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 2;
  }

  try {
    if (action) action();
    return gradcheck_status;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const InvalidSpan& e) {
    err << "invalid span: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace clsm::cli
