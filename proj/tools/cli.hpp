#pragma once

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "fatnet/checkpoint.hpp"
#include "fatnet/config.hpp"
#include "fatnet/data.hpp"
#include "fatnet/experiments.hpp"
#include "fatnet/train.hpp"

namespace fatnet::cli {

enum ExitCode { kOk = 0, kUsage = 1, kFailure = 2 };

namespace detail {

/// Config file first, then `--set key=value` overrides in order.
inline RunConfig resolve_config(const std::string& path, const std::vector<std::string>& sets) {
  RunConfig cfg = path.empty() ? RunConfig{} : load_run_config(path);
  std::string text;
  for (const auto& s : sets) {
    if (s.find('=') == std::string::npos)
      throw InvalidArgument("--set expects key=value, got '" + s + "'");
    text += s + "\n";
  }
  try {
    apply_entries(cfg, parse_config_text(text));
  } catch (const ParseError& e) {
    throw InvalidArgument(std::string("--set: ") + e.what());
  }
  return cfg;
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw Error("cannot write " + path);
}

template <typename N>
std::vector<N> split_list(const std::string& s) {
  std::vector<N> out;
  ConfigEntry e{"list", s, 0};
  for (auto v : fatnet::detail::parse_list(e)) out.push_back(N(v));
  return out;
}

}  // namespace detail

/**
 * Runs one CLI invocation. `args` excludes the program name. Results go to
 * `out`, diagnostics and usage text to `err`.
 */
inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"FatNet point-cloud networks", "fatnet"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset directory");
  std::string synth_out, synth_task = "classify", synth_classes = "sphere,cube,cylinder,cone";
  std::size_t per_train = 50, per_test = 20, synth_points = 64;
  std::uint64_t synth_seed = 1;
  synth->add_option("--out", synth_out, "Dataset directory")->required();
  synth->add_option("--task", synth_task, "classify or segment")
      ->check(CLI::IsMember({"classify", "segment"}));
  synth->add_option("--classes", synth_classes, "Comma-separated shapes (classify)");
  synth->add_option("--train", per_train, "Training clouds per class or category");
  synth->add_option("--test", per_test, "Test clouds per class or category");
  synth->add_option("--points", synth_points, "Points per cloud");
  synth->add_option("--seed", synth_seed, "Master seed");

  // sample
  auto* sample = app.add_subcommand("sample", "Sample an OFF mesh into a cloud file");
  std::string off_path, sample_out;
  std::size_t sample_points = 1024;
  std::uint64_t sample_seed = 1;
  std::vector<std::uint32_t> sample_label;
  sample->add_option("--off", off_path, "OFF mesh")->required();
  sample->add_option("--out", sample_out, "Output .fpts file")->required();
  sample->add_option("--points", sample_points, "Surface samples");
  sample->add_option("--seed", sample_seed, "Sampling seed");
  sample->add_option("--label", sample_label, "Class label to store")->expected(0, 1);

  // shared run options
  std::string config_path, data_dir;
  std::vector<std::string> sets;
  auto add_run_options = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key = value config file");
    sub->add_option("--set", sets, "Override one config key (key=value)");
    sub->add_option("--data", data_dir, "Dataset directory (overrides the config)");
  };

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  add_run_options(train_cmd);
  std::string ckpt_out = "model.ckpt", history_out;
  std::size_t epochs = 0;
  std::uint64_t train_seed = 0;
  train_cmd->add_option("--out", ckpt_out, "Checkpoint path (best epoch goes to <out>.best)");
  train_cmd->add_option("--history", history_out, "Per-epoch CSV");
  train_cmd->add_option("--epochs", epochs, "Epochs (overrides the config)");
  train_cmd->add_option("--seed", train_seed, "Seed (overrides the config)");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string ckpt_in, eval_split = "test";
  eval_cmd->add_option("--checkpoint", ckpt_in, "Checkpoint")->required();
  eval_cmd->add_option("--data", data_dir, "Dataset directory")->required();
  eval_cmd->add_option("--split", eval_split)->check(CLI::IsMember({"train", "test"}));

  // gradcheck
  auto* grad_cmd = app.add_subcommand("gradcheck", "End-to-end gradient check");
  std::uint64_t grad_seed = 7;
  double grad_h = 1e-5, grad_tol = 1e-4;
  grad_cmd->add_option("--seed", grad_seed, "Seed for state and input");
  grad_cmd->add_option("--step", grad_h, "Finite-difference step h");
  grad_cmd->add_option("--tolerance", grad_tol, "Relative error gate");

  // dropout
  auto* drop_cmd = app.add_subcommand("dropout", "Accuracy under random point dropout");
  std::string keep_list = "1024,512,256,128", drop_out;
  std::size_t repeats = 5;
  std::uint64_t drop_seed = 1;
  drop_cmd->add_option("--checkpoint", ckpt_in, "Checkpoint")->required();
  drop_cmd->add_option("--data", data_dir, "Dataset directory")->required();
  drop_cmd->add_option("--keep", keep_list, "Comma-separated point counts");
  drop_cmd->add_option("--repeats", repeats, "Draws per count");
  drop_cmd->add_option("--seed", drop_seed);
  drop_cmd->add_option("--out", drop_out, "CSV output");

  // ablate
  auto* ablate_cmd = app.add_subcommand("ablate", "Train architecture variants over seeds");
  add_run_options(ablate_cmd);
  std::string variant_list, seed_list = "1,2,3", ablate_out;
  ablate_cmd->add_option("--variants", variant_list, "Comma-separated variants")->required();
  ablate_cmd->add_option("--seeds", seed_list, "Comma-separated seeds");
  ablate_cmd->add_option("--epochs", epochs, "Epochs (overrides the config)");
  ablate_cmd->add_option("--out", ablate_out, "CSV output");

  // info
  auto* info_cmd = app.add_subcommand("info", "Parameter count and resolved config");
  info_cmd->add_option("--config", config_path, "key = value config file");
  info_cmd->add_option("--set", sets, "Override one config key (key=value)");

  std::vector<std::string> argv_store{"fatnet"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(int(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kUsage;
  }

  try {
    if (*synth) {
      Dataset ds;
      if (synth_task == "classify") {
        SyntheticSpec spec;
        spec.classes.clear();
        std::stringstream ss(synth_classes);
        for (std::string c; std::getline(ss, c, ',');) spec.classes.push_back(fatnet::detail::trim(c));
        spec.train_per_class = per_train;
        spec.test_per_class = per_test;
        spec.points = synth_points;
        spec.seed = synth_seed;
        ds = generate_synthetic(spec);
      } else {
        SegSyntheticSpec spec;
        spec.train_per_category = per_train;
        spec.test_per_category = per_test;
        spec.points = synth_points;
        spec.seed = synth_seed;
        ds = generate_seg_synthetic(spec);
      }
      save_dataset(ds, synth_out);
      out << "wrote " << ds.train.size() << " train and " << ds.test.size() << " test clouds to "
          << synth_out << "\n";
      return kOk;
    }

    if (*sample) {
      Sample s;
      s.cloud = cloud_from_off(read_text_file(off_path), sample_points, sample_seed);
      CloudFile c = to_cloud_file(s, Task::kClassify);
      if (sample_label.empty()) {
        c.has_labels = false;
        c.labels.clear();
      } else {
        c.labels = {sample_label[0]};
      }
      write_cloud_file(sample_out, c);
      out << "wrote " << s.cloud.size() << " points to " << sample_out << "\n";
      return kOk;
    }

    if (*info_cmd) {
      const RunConfig cfg = detail::resolve_config(config_path, sets);
      cfg.model.validate();
      FatNet<float> model(cfg.model);
      out << model_config_text(cfg.model) << train_config_text(cfg.train);
      if (!cfg.data.empty()) out << "data = " << cfg.data << "\n";
      out << "parameters = " << count_parameters(model) << "\n";
      return kOk;
    }

    if (*grad_cmd) {
      const auto r = run_model_gradcheck(grad_seed, grad_h);
      out << "checked " << r.checked << " parameters\n";
      out << "max relative error " << std::scientific << std::setprecision(3) << r.max_rel_error
          << " at " << r.worst_name << "[" << r.worst_index << "] (analytic "
          << r.worst_analytic << ", numeric " << r.worst_numeric << ")\n";
      if (r.discontinuities)
        out << r.discontinuities << " element(s) skipped: the probe straddles a kink, first "
            << r.first_discontinuity << "\n";
      const bool ok = r.passed(grad_tol);
      out << (ok ? "PASS" : "FAIL") << " (gate " << grad_tol << ")\n";
      return ok ? kOk : kFailure;
    }

    if (*eval_cmd) {
      auto model = load_checkpoint<float>(ckpt_in);
      const Dataset ds = load_dataset(data_dir);
      const auto& split = eval_split == "train" ? ds.train : ds.test;
      const auto r = evaluate(model, ds, split);
      if (ds.task == Task::kClassify) {
        out << "instance_acc " << detail::fmt(r.instance_acc) << "\n"
            << "class_acc " << detail::fmt(r.class_acc) << "\n";
      } else {
        out << "miou " << detail::fmt(r.miou) << "\n"
            << "point_acc " << detail::fmt(r.instance_acc) << "\n";
      }
      return kOk;
    }

    if (*drop_cmd) {
      auto model = load_checkpoint<float>(ckpt_in);
      const Dataset ds = load_dataset(data_dir);
      const auto rows = run_dropout_experiment(model, ds, ds.test,
                                               detail::split_list<std::size_t>(keep_list),
                                               repeats, drop_seed);
      std::string csv = "keep,mean_acc,min_acc,max_acc\n";
      for (const auto& r : rows) {
        const auto [lo, hi] = std::minmax_element(r.accs.begin(), r.accs.end());
        csv += std::to_string(r.keep) + "," + detail::fmt(r.mean_acc) + "," + detail::fmt(*lo) +
               "," + detail::fmt(*hi) + "\n";
      }
      out << csv;
      if (!drop_out.empty()) detail::write_text(drop_out, csv);
      return kOk;
    }

    if (*train_cmd || *ablate_cmd) {
      RunConfig cfg = detail::resolve_config(config_path, sets);
      if (!data_dir.empty()) cfg.data = data_dir;
      if (epochs) cfg.train.epochs = epochs;
      if (train_seed) cfg.train.seed = train_seed;
      if (cfg.data.empty()) throw InvalidArgument("no dataset: pass --data or set data = ...");
      const Dataset ds = load_dataset(cfg.data);
      cfg.model.task = ds.task;
      cfg.model.classes = ds.num_labels;
      cfg.model.validate();
      cfg.train.validate();

      if (*train_cmd) {
        auto model = make_model<float>(cfg.model, cfg.train.seed);
        std::string csv = history_header(ds.task) + "\n";
        out << csv;
        const auto result = train(model, ds, cfg.train, ckpt_out, [&](const EpochRecord& r) {
          out << history_row(r) << std::endl;
          csv += history_row(r) + "\n";
        });
        if (!history_out.empty()) detail::write_text(history_out, csv);
        out << "saved " << ckpt_out;
        if (result.best_val)
          out << " (best epoch " << result.best_epoch << ": " << detail::fmt(*result.best_val)
              << " in " << ckpt_out << ".best)";
        out << "\n";
        return kOk;
      }

      std::vector<std::string> variants;
      std::stringstream ss(variant_list);
      for (std::string v; std::getline(ss, v, ',');) variants.push_back(fatnet::detail::trim(v));
      const auto seeds = detail::split_list<std::uint64_t>(seed_list);
      const auto rows = run_ablation_suite(
          cfg.model, cfg.train, ds, variants, seeds,
          [&](const std::string& v, std::uint64_t s, const EpochRecord& r) {
            err << v << " seed " << s << ": " << history_row(r) << "\n";
          });
      const std::string metric = ds.task == Task::kClassify ? "acc" : "miou";
      std::string csv = "variant,parameters,median_" + metric;
      for (auto s : seeds) csv += ",seed_" + std::to_string(s);
      csv += "\n";
      for (const auto& r : rows) {
        csv += r.variant + "," + std::to_string(r.parameters) + "," + detail::fmt(r.median_metric);
        for (const auto& run : r.runs) csv += "," + detail::fmt(run.metric);
        csv += "\n";
      }
      out << csv;
      if (!ablate_out.empty()) detail::write_text(ablate_out, csv);
      return kOk;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}

}  // namespace fatnet::cli
