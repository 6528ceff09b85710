#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "shareconv/catalog.hpp"
#include "shareconv/checkpoint.hpp"
#include "shareconv/data.hpp"
#include "shareconv/trainer.hpp"
#include "shareconv/verify.hpp"

using namespace shareconv;

namespace {

struct DataOptions {
  std::string dataset = "synthetic";
  std::string data_dir;
  std::size_t subset = 0;
  // synthetic blobs
  std::size_t classes = 4;
  std::size_t per_class = 200;
  std::size_t test_per_class = 50;
  std::size_t image_size = 16;
  double noise = 0.5;
};

void add_data_options(CLI::App& cmd, DataOptions& d) {
  cmd.add_option("--dataset", d.dataset, "cifar10, cifar100 or synthetic")
      ->check(CLI::IsMember({"cifar10", "cifar100", "synthetic"}));
  cmd.add_option("--data-dir", d.data_dir, "directory holding the CIFAR binary files");
  cmd.add_option("--subset", d.subset, "use only the first N training samples (0: all)");
  cmd.add_option("--classes", d.classes, "synthetic: class count")->check(CLI::PositiveNumber);
  cmd.add_option("--per-class", d.per_class, "synthetic: training samples per class")->check(CLI::PositiveNumber);
  cmd.add_option("--test-per-class", d.test_per_class, "synthetic: test samples per class")
      ->check(CLI::PositiveNumber);
  cmd.add_option("--image-size", d.image_size, "synthetic: image side length")->check(CLI::PositiveNumber);
  cmd.add_option("--noise", d.noise, "synthetic: pixel noise std")->check(CLI::NonNegativeNumber);
}

struct LoadedData {
  Dataset train;
  Dataset test;
};

LoadedData load_data(const DataOptions& d, std::uint64_t seed) {
  LoadedData out;
  if (d.dataset == "synthetic") {
    BlobConfig cfg{d.classes, d.per_class, 3, d.image_size, d.image_size, d.noise, seed};
    out.train = synthetic_blobs(cfg);
    cfg.per_class = d.test_per_class;
    cfg.seed = seed + 0x5eed;
    out.test = synthetic_blobs(cfg);
  } else {
    if (d.data_dir.empty()) throw Error(fmt::format("--data-dir is required for {}", d.dataset));
    const auto variant = d.dataset == "cifar10" ? CifarVariant::cifar10 : CifarVariant::cifar100;
    CifarData cifar = load_cifar_binary(d.data_dir, variant);
    out.train = std::move(cifar.train);
    out.test = std::move(cifar.test);
  }
  if (d.subset > 0) out.train = out.train.head(d.subset);
  return out;
}

std::string millions(std::size_t n) { return fmt::format("{:.2f}M", static_cast<double>(n) / 1e6); }

const char* flag(bool ok) { return ok ? "match" : "MISMATCH"; }

int run_count(const std::string& arch, bool shared) {
  const ArchitectureRef ref = ArchitectureRef::parse(arch);
  const auto& entry = find_entry(ref.base);
  const NetworkSpec unshared_spec = make_spec(ref, false);
  const NetworkSpec shared_spec = make_spec(ref, true);
  const std::size_t unshared = count_parameters(unshared_spec);
  const std::size_t with_sharing = count_parameters(shared_spec);
  const std::size_t params = shared ? with_sharing : unshared;
  const double reduction = 100.0 * static_cast<double>(unshared - with_sharing) / static_cast<double>(unshared);
  const ConvCounts convs = count_distinct_convs(shared ? shared_spec : unshared_spec);

  fmt::print("architecture      {}{}\n", ref.to_string(), shared ? " (shared)" : "");
  fmt::print("parameters        {} ({})\n", params, millions(params));
  fmt::print("unshared/shared   {} / {}\n", unshared, with_sharing);
  fmt::print("savings           {} ({:.2f}%)\n", unshared - with_sharing, reduction);
  fmt::print("distinct convs    {}\n", convs.distinct_slots);
  fmt::print("depth             nominal {}, under policy {}, all blocks shared {}\n", convs.nominal_depth,
             convs.policy_depth, convs.all_share_depth);
  if (entry.reference && ref.width_divisor == 1 && ref.max_blocks == 0) {
    const PaperFigures& p = *entry.reference;
    const double ref_params = shared ? p.params_shared_m : p.params_original_m;
    const double got = static_cast<double>(params) / 1e6;
    const bool params_ok = std::abs(got - ref_params) <= 0.01 * ref_params;
    const bool reduction_ok = std::abs(reduction - p.decrease_percent) <= 1.0;
    const std::size_t ref_convs = shared ? p.convs_shared : p.convs_original;
    const std::size_t got_convs = shared ? convs.all_share_depth : convs.nominal_depth;
    fmt::print("reference params  {:.2f}M  {}\n", ref_params, flag(params_ok));
    fmt::print("reference saving  {:.0f}%  {}\n", p.decrease_percent, flag(reduction_ok));
    fmt::print("reference convs   {}  {} (got {})\n", ref_convs, flag(ref_convs == got_convs), got_convs);
  }
  return 0;
}

int run_list(std::optional<std::string> dataset) {
  std::optional<DatasetFamily> filter;
  if (dataset) filter = parse_dataset_family(*dataset);
  fmt::print("{:<10} {:<9} {:>5} {:>12} {:>12} {:>7} {:>6} {:>6}\n", "name", "dataset", "depth", "unshared",
             "shared", "saving", "convs", "shared");
  for (const auto& r : list_architectures(filter)) {
    fmt::print("{:<10} {:<9} {:>5} {:>12} {:>12} {:>6.1f}% {:>6} {:>6}\n", r.name, to_string(r.dataset), r.depth,
               r.params_unshared, r.params_shared, r.reduction_percent, r.convs_unshared, r.convs_shared_all);
  }
  for (const auto& e : catalog()) {
    if (!e.reference && !filter) fmt::print("{:<10} {:<9} (toy)\n", e.name, to_string(e.dataset));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"shareconv: residual networks with stage-shared 3x3 convolutions"};
  app.require_subcommand(1);

  std::string arch;
  bool shared = false;
  std::uint64_t seed = 0;

  auto* count = app.add_subcommand("count", "print parameter and convolution counts");
  count->add_option("--arch", arch, "architecture, e.g. resnet50 or resnet164/w8/b3")->required();
  count->add_flag("--shared", shared, "count with stage sharing");

  auto* list = app.add_subcommand("list", "print every reference architecture");
  std::optional<std::string> list_dataset;
  list->add_option("--dataset", list_dataset, "restrict to one dataset family");

  TrainConfig train_cfg;
  DataOptions data;
  std::vector<std::string> drops;
  bool no_augment = false;
  std::optional<double> weight_decay;
  auto* train_cmd = app.add_subcommand("train", "train a network");
  train_cmd->add_option("--arch", train_cfg.architecture, "architecture")->required();
  train_cmd->add_flag("--shared", train_cfg.shared, "share the designated 3x3 per stage");
  add_data_options(*train_cmd, data);
  train_cmd->add_option("--epochs", train_cfg.epochs)->check(CLI::PositiveNumber);
  train_cmd->add_option("--batch", train_cfg.batch_size)->check(CLI::PositiveNumber);
  train_cmd->add_option("--lr", train_cfg.optimizer.alpha)->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--momentum", train_cfg.optimizer.gamma);
  train_cmd->add_option("--weight-decay", weight_decay)->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--lr-drop", drops, "E:F multiplies the rate by F from epoch E on (repeatable)");
  train_cmd->add_option("--seed", train_cfg.seed);
  train_cmd->add_option("--out", train_cfg.out_dir, "directory for metrics.csv and checkpoints")->required();
  train_cmd->add_option("--prefetch", train_cfg.prefetch, "batches assembled ahead of the trainer");
  train_cmd->add_flag("--no-augment", no_augment, "disable CIFAR flip/crop augmentation");

  std::string checkpoint;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  add_data_options(*eval_cmd, data);
  eval_cmd->add_option("--seed", seed, "synthetic data seed");

  GradcheckOptions grad_opts;
  bool unshared = false;
  auto* grad_cmd = app.add_subcommand("gradcheck", "compare backward against finite differences");
  grad_cmd->add_option("--arch", grad_opts.architecture, "architecture (default: toy)");
  grad_cmd->add_option("--seed", grad_opts.seed);
  grad_cmd->add_flag("--unshared", unshared, "check the unshared variant");
  grad_cmd->add_option("--epsilon", grad_opts.epsilon, "finite-difference step")->check(CLI::PositiveNumber);
  grad_cmd->add_option("--batch", grad_opts.batch)->check(CLI::PositiveNumber);
  grad_cmd->add_option("--extent", grad_opts.max_extent, "largest input side length")->check(CLI::PositiveNumber);

  EquivOptions equiv_opts;
  auto* equiv_cmd = app.add_subcommand("equiv", "check the shared network against a tied unshared clone");
  equiv_cmd->add_option("--arch", equiv_opts.architecture)->required();
  equiv_cmd->add_option("--seed", equiv_opts.seed);
  equiv_cmd->add_option("--width-divisor", equiv_opts.width_divisor)->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*count) return run_count(arch, shared);
    if (*list) return run_list(list_dataset);
    if (*train_cmd) {
      const bool cifar = data.dataset != "synthetic";
      train_cfg.optimizer.weight_decay = weight_decay.value_or(cifar ? 5e-4 : 0.0);
      for (const auto& d : drops) train_cfg.optimizer.schedule.push_back(parse_lr_drop(d));
      if (cifar && !no_augment) train_cfg.augment = AugmentConfig{true, 4, 0};
      const LoadedData loaded = load_data(data, train_cfg.seed);
      const TrainResult result = train(train_cfg, loaded.train, loaded.test, &std::cout);
      const auto& last = result.history.back();
      fmt::print("final top1 {:.2f}% top5 {:.2f}%, best top1 {:.2f}%, parameter hash {:016x}\n", last.top1_error,
                 last.top5_error, result.best_top1_error, result.parameter_hash);
      return 0;
    }
    if (*eval_cmd) {
      const LoadedData loaded = load_data(data, seed);
      const TopKErrors e = evaluate_checkpoint(checkpoint, loaded.test);
      fmt::print("top1 error {:.2f}%  top5 error {:.2f}%  ({} samples)\n", e.top1, e.top5, loaded.test.size());
      return 0;
    }
    if (*grad_cmd) {
      grad_opts.shared = !unshared;
      const GradcheckReport r = gradcheck(grad_opts);
      fmt::print("gradcheck {} ({})\n", r.architecture, r.shared ? "shared" : "unshared");
      for (const auto& s : r.slots) {
        fmt::print("  {:<36} bindings {:>2}  elements {:>6}  rel err {:.3e}\n", s.name, s.bindings, s.elements,
                   s.relative_error);
      }
      if (r.refined > 0) {
        fmt::print("  {} probes straddled a ReLU/pooling kink and were shrunk ({} unresolved)\n", r.refined,
                   r.unresolved);
      }
      fmt::print("{}: max rel err {:.3e} at {}\n", r.passed ? "PASS" : "FAIL", r.max_error, r.worst_slot);
      return r.passed ? 0 : 1;
    }
    if (*equiv_cmd) {
      const EquivReport r = equiv(equiv_opts);
      fmt::print("equiv {} (shared slots carry up to {} bindings)\n", r.architecture, r.max_bindings);
      fmt::print("  forward tie-equality   rel err {:.3e}  {}\n", r.forward_error, r.forward_ok ? "ok" : "FAIL");
      fmt::print("  gradient sum           rel err {:.3e}  {} (worst {})\n", r.gradient_error,
                 r.gradient_ok ? "ok" : "FAIL", r.worst_gradient_slot);
      fmt::print("  post-step difference   {:.3e}  {}\n", r.post_step_difference, r.divergence_ok ? "ok" : "FAIL");
      fmt::print("{}\n", r.passed() ? "PASS" : "FAIL");
      return r.passed() ? 0 : 1;
    }
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 1;
}
