#include "cli.hpp"

#include "latentlab/datasets.hpp"

#include "CLI11.hpp"

#include <map>
#include <optional>
#include <set>
#include <sstream>

namespace latentlab::cli {

namespace {

using datasets::Json;
using datasets::ModelFile;
namespace ds = latentlab::datasets;

// Bad flags, settings or inputs; maps to exit code 2.
struct UsageError : InvalidArgument {
  using InvalidArgument::InvalidArgument;
};

// ---------------------------------------------------------------- settings

enum class DataKind { table, codes, sequences, corpus };

struct Family {
  DataKind data;
  bool em;
  Json defaults;  // null marks a required setting
};

const Json kNull = nullptr;

Json em_defaults(Json extra, double rel_tol = 1e-7) {
  Json j = {{"max_iters", 500}, {"rel_tol", rel_tol}, {"abs_tol", 1e-10}};
  for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  return j;
}

const std::map<std::string, Family> &families() {
  static const std::map<std::string, Family> table{
      {"ppca", {DataKind::table, true, em_defaults({{"latent_dim", kNull}, {"method", "em"}})}},
      {"gmm", {DataKind::table, true, em_defaults({{"k", kNull}})}},
      {"lca", {DataKind::codes, true, em_defaults({{"k", kNull}})}},
      {"irt", {DataKind::codes, true, em_defaults({{"quad_points", 41}, {"estimate_discrimination", true}})}},
      {"lda", {DataKind::corpus, true, em_defaults({{"k", kNull}, {"alpha", 0.5}, {"beta", 0.1}}, 1e-6)}},
      {"hmm", {DataKind::sequences, true, em_defaults({{"k", kNull}, {"symbols", 0}})}},
      {"ghmm", {DataKind::sequences, true, em_defaults({{"k", kNull}})}},
      {"lds", {DataKind::sequences, true, em_defaults({{"latent_dim", kNull}})}},
      {"vae",
       {DataKind::table, false,
        {{"latent_dim", 1}, {"hidden", {64}}, {"activation", "tanh"}, {"likelihood", "gaussian"},
         {"sigma_dec", 0.1}, {"epochs", 50}, {"batch", 32}, {"lr", 1e-3}, {"eval_samples", 16}}}},
      {"flow",
       {DataKind::table, false,
        {{"couplings", 6}, {"hidden", {32, 32}}, {"activation", "tanh"}, {"epochs", 100}, {"batch", 128}, {"lr", 1e-3}}}},
      {"diffusion",
       {DataKind::table, false,
        {{"steps", 50}, {"beta_1", 1e-4}, {"beta_T", 0.2}, {"hidden", {32, 32}}, {"activation", "tanh"},
         {"epochs", 200}, {"batch", 128}, {"lr", 1e-3}, {"eval_samples", 16}}}},
      {"arm",
       {DataKind::codes, false,
        {{"alphabet", 0}, {"hidden", {64}}, {"activation", "tanh"}, {"epochs", 100}, {"batch", 64}, {"lr", 1e-3}}}},
      {"gan",
       {DataKind::table, false,
        {{"prior_dim", 1}, {"gen_hidden", {16}}, {"disc_hidden", {32}}, {"activation", "tanh"}, {"train_steps", 2000},
         {"batch", 64}, {"k_disc", 1}, {"lr", 1e-3}, {"loss", "non_saturating"}}}},
  };
  return table;
}

const Family &family_info(const std::string &name) {
  const auto it = families().find(name);
  if (it == families().end()) {
    std::string known;
    for (const auto &[k, v] : families()) known += (known.empty() ? "" : ", ") + k;
    throw UsageError("unknown family '" + name + "' (expected one of " + known + ")");
  }
  return it->second;
}

// Typed access to merged settings; type errors name the setting.
class Settings {
public:
  explicit Settings(Json j) : j_(std::move(j)) {}

  [[nodiscard]] const Json &json() const { return j_; }

  long long integer(const std::string &key, long long min = 0) const {
    const Json &v = j_.at(key);
    if (!v.is_number_integer() || v.get<long long>() < min)
      throw UsageError("setting '" + key + "' must be an integer >= " + std::to_string(min));
    return v.get<long long>();
  }
  int small(const std::string &key, int min = 0) const { return static_cast<int>(integer(key, min)); }
  double number(const std::string &key) const {
    const Json &v = j_.at(key);
    if (!v.is_number()) throw UsageError("setting '" + key + "' must be a number");
    return v.get<double>();
  }
  double positive(const std::string &key) const {
    const double v = number(key);
    if (!(v > 0.0)) throw UsageError("setting '" + key + "' must be positive");
    return v;
  }
  std::string text(const std::string &key) const {
    const Json &v = j_.at(key);
    if (!v.is_string()) throw UsageError("setting '" + key + "' must be a string");
    return v.get<std::string>();
  }
  bool flag(const std::string &key) const {
    const Json &v = j_.at(key);
    if (!v.is_boolean()) throw UsageError("setting '" + key + "' must be true or false");
    return v.get<bool>();
  }
  std::vector<int> widths(const std::string &key) const {
    const Json &v = j_.at(key);
    std::vector<int> out;
    if (v.is_array())
      for (const auto &e : v) {
        if (!e.is_number_integer() || e.get<long long>() < 1) throw UsageError("setting '" + key + "' must list positive integers");
        out.push_back(e.get<int>());
      }
    else
      throw UsageError("setting '" + key + "' must list positive integers");
    return out;
  }
  nn::Activation activation(const std::string &key) const {
    try {
      return nn::activation_from_name(text(key));
    } catch (const InvalidArgument &) {
      throw UsageError("setting '" + key + "' names an unknown activation");
    }
  }
  EmConfig em(std::uint64_t seed) const {
    EmConfig cfg;
    cfg.max_iters = small("max_iters", 1);
    cfg.rel_tol = positive("rel_tol");
    cfg.abs_tol = positive("abs_tol");
    cfg.seed = seed;
    return cfg;
  }
  nn::AdamConfig adam() const {
    nn::AdamConfig a;
    a.lr = positive("lr");
    return a;
  }

private:
  Json j_;
};

// Family defaults, then the config file, then flags; keys outside the
// family's set are rejected.
Settings merge_settings(const std::string &family, const Json &file, const Json &flags) {
  Json merged = family_info(family).defaults;
  for (const Json *layer : {&file, &flags})
    for (auto it = layer->begin(); it != layer->end(); ++it) {
      if (!merged.contains(it.key()))
        throw UsageError("setting '" + it.key() + "' is not recognized for family '" + family + "'");
      merged[it.key()] = it.value();
    }
  for (auto it = merged.begin(); it != merged.end(); ++it)
    if (it.value().is_null()) throw UsageError("setting '" + it.key() + "' is required for family '" + family + "'");
  return Settings(std::move(merged));
}

// ---------------------------------------------------------------- io

struct TraceTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};

void write_trace(const std::string &path, const TraceTable &t) {
  Mat m(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(t.columns.size()));
  for (std::size_t i = 0; i < t.rows.size(); ++i)
    for (std::size_t j = 0; j < t.columns.size(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = t.rows[i][j];
  ds::write_csv(path, {t.columns, m});
}

TraceTable em_trace(const FitReport &report) {
  TraceTable t{{"iteration", "objective"}, {{0.0, report.initial_objective}}};
  for (std::size_t i = 0; i < report.objective_trace.size(); ++i)
    t.rows.push_back({static_cast<double>(i + 1), report.objective_trace[i]});
  return t;
}

TraceTable epoch_trace(const std::vector<double> &values, const std::string &name) {
  TraceTable t{{"epoch", name}, {}};
  for (std::size_t i = 0; i < values.size(); ++i) t.rows.push_back({static_cast<double>(i + 1), values[i]});
  return t;
}

Mat read_table(const std::string &path) { return ds::read_csv(path).values; }
IntMat read_codes(const std::string &path) { return ds::read_csv(path).codes(); }

std::vector<sequential::Sequence> read_seqs(const std::string &path, bool discrete) {
  ds::SequenceSet s = ds::read_sequences(path);
  if (s.discrete != discrete)
    throw UsageError("'" + path + "' must be a " +
                     (discrete ? std::string("discrete sequence file") : std::string("continuous sequence file with a d_x header")));
  if (s.seqs.empty()) throw UsageError("'" + path + "' holds no sequences");
  return std::move(s.seqs);
}

std::vector<std::string> names(const std::string &prefix, Eigen::Index n) {
  std::vector<std::string> out;
  for (Eigen::Index i = 1; i <= n; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

// ---------------------------------------------------------------- fit

struct Fitted {
  ds::Model model;
  TraceTable trace;
};

Fitted fit_family(const std::string &family, const Settings &s, const std::string &data, std::uint64_t seed) {
  if (family == "ppca") {
    const Mat x = read_table(data);
    const auto m = s.integer("latent_dim", 1);
    const std::string method = s.text("method");
    if (method == "closed") {
      ppca::PpcaParams p = ppca::fit_closed_form(x, m);
      return {p, {{"iteration", "objective"}, {{0.0, ppca::log_likelihood(p, x)}}}};
    }
    if (method != "em") throw UsageError("setting 'method' must be 'em' or 'closed'");
    auto [p, report] = ppca::fit_em(x, m, s.em(seed));
    return {p, em_trace(report)};
  }
  if (family == "gmm") {
    auto [p, report] = mixture::fit_gmm(read_table(data), s.integer("k", 1), s.em(seed));
    return {p, em_trace(report)};
  }
  if (family == "lca") {
    const IntMat x = read_codes(data);
    auto [p, report] = mixture::fit_lca(x, mixture::infer_categories(x), s.integer("k", 1), s.em(seed));
    return {p, em_trace(report)};
  }
  if (family == "irt") {
    irt::IrtFitOptions opt;
    opt.estimate_discrimination = s.flag("estimate_discrimination");
    auto [p, report] = irt::fit_irt(read_codes(data), irt::QuadratureRule::gauss_hermite(s.small("quad_points", 2)),
                                    s.em(seed), opt);
    return {p, em_trace(report)};
  }
  if (family == "lda") {
    const lda::Corpus corpus = ds::read_corpus(data);
    const auto k = s.integer("k", 1);
    const auto hyper = lda::LdaHyper::symmetric(k, corpus.vocab_size, s.positive("alpha"), s.positive("beta"));
    EmConfig cfg = s.em(seed);
    cfg.monotone_slack = lda::default_config().monotone_slack;
    auto [var, report] = lda::fit_lda(hyper, corpus, cfg);
    return {ds::LdaModel{hyper, var.topic_word, ds::LdaModel::Topics::concentration}, em_trace(report)};
  }
  if (family == "hmm" || family == "ghmm") {
    const bool discrete = family == "hmm";
    sequential::HmmFitOptions opt;
    if (discrete) opt.symbols = s.integer("symbols", 0);
    auto [p, report] = sequential::fit_hmm(read_seqs(data, discrete), s.integer("k", 1),
                                           discrete ? sequential::EmissionKind::discrete : sequential::EmissionKind::gaussian,
                                           s.em(seed), opt);
    return {p, em_trace(report)};
  }
  if (family == "lds") {
    auto [p, report] = sequential::fit_lds(read_seqs(data, false), s.integer("latent_dim", 1), s.em(seed));
    return {p, em_trace(report)};
  }

  RandomSource rng(seed);
  if (family == "vae") {
    const Mat x = read_table(data);
    vae::VaeConfig cfg;
    cfg.latent = s.small("latent_dim", 1);
    cfg.hidden = s.widths("hidden");
    cfg.activation = s.activation("activation");
    const std::string lik = s.text("likelihood");
    if (lik == "bernoulli") cfg.likelihood = vae::Likelihood::bernoulli;
    else if (lik != "gaussian") throw UsageError("setting 'likelihood' must be 'gaussian' or 'bernoulli'");
    cfg.sigma_dec = s.positive("sigma_dec");
    (void)s.small("eval_samples", 1);
    vae::VaeModel m = vae::VaeModel::create(static_cast<int>(x.cols()), cfg, rng);
    vae::TrainConfig tc;
    tc.epochs = s.small("epochs");
    tc.batch = s.small("batch", 1);
    tc.adam = s.adam();
    const auto trace = vae::train(m, x, tc, rng);
    return {m, epoch_trace(trace.epoch_elbo, "elbo")};
  }
  if (family == "flow") {
    const Mat x = read_table(data);
    if (x.cols() < 2)
      throw UsageError("flow needs at least two data columns; pad 1-d data with an independent N(0, 1) column");
    flow::CouplingConfig cfg;
    cfg.couplings = s.small("couplings", 1);
    cfg.hidden = s.widths("hidden");
    cfg.activation = s.activation("activation");
    flow::FlowModel m = flow::FlowModel::coupling_stack(static_cast<int>(x.cols()), cfg, rng);
    flow::FitConfig fc;
    fc.epochs = s.small("epochs");
    fc.batch = s.small("batch", 1);
    fc.adam = s.adam();
    const auto trace = flow::fit(m, x, fc, rng);
    return {m, epoch_trace(trace.epoch_loglik, "loglik")};
  }
  if (family == "diffusion") {
    const Mat x = read_table(data);
    diffusion::DiffusionConfig cfg;
    cfg.steps = s.small("steps", 1);
    cfg.beta_1 = s.positive("beta_1");
    cfg.beta_T = s.positive("beta_T");
    cfg.hidden = s.widths("hidden");
    cfg.activation = s.activation("activation");
    (void)s.small("eval_samples", 1);
    diffusion::DiffusionModel m = diffusion::DiffusionModel::create(static_cast<int>(x.cols()), cfg, rng);
    diffusion::TrainConfig tc;
    tc.epochs = s.small("epochs");
    tc.batch = s.small("batch", 1);
    tc.adam = s.adam();
    const auto trace = diffusion::train(m, x, tc, rng);
    return {m, epoch_trace(trace.epoch_loss, "loss_simple")};
  }
  if (family == "arm") {
    const IntMat x = read_codes(data);
    int alphabet = s.small("alphabet");
    if (alphabet == 0) alphabet = std::max(2, x.size() ? x.maxCoeff() + 1 : 2);
    arm::ArModel m = arm::ArModel::create(static_cast<int>(x.cols()), alphabet,
                                          {s.widths("hidden"), s.activation("activation")}, rng);
    arm::TrainConfig tc;
    tc.epochs = s.small("epochs");
    tc.batch = s.small("batch", 1);
    tc.adam = s.adam();
    const auto trace = arm::train(m, x, tc, rng);
    return {m, epoch_trace(trace.epoch_loglik, "loglik")};
  }
  if (family == "gan") {
    const Mat x = read_table(data);
    gan::GanConfig cfg{s.small("prior_dim", 1), s.widths("gen_hidden"), s.widths("disc_hidden"), s.activation("activation")};
    gan::GanModel m = gan::GanModel::create(static_cast<int>(x.cols()), cfg, rng);
    gan::TrainConfig tc;
    tc.steps = s.small("train_steps");
    tc.batch = s.small("batch", 1);
    tc.k_disc = s.small("k_disc", 1);
    tc.gen_adam.lr = tc.disc_adam.lr = s.positive("lr");
    const std::string loss = s.text("loss");
    if (loss == "minimax") tc.loss = gan::GenLoss::minimax;
    else if (loss != "non_saturating") throw UsageError("setting 'loss' must be 'non_saturating' or 'minimax'");
    const auto trace = gan::train(m, x, tc, rng);
    TraceTable t{{"step", "disc_loss", "gen_loss"}, {}};
    for (std::size_t i = 0; i < trace.gen_loss.size(); ++i)
      t.rows.push_back({static_cast<double>(i + 1), trace.disc_loss[i], trace.gen_loss[i]});
    return {m, t};
  }
  throw UsageError("unknown family '" + family + "'");
}

// ---------------------------------------------------------------- eval

struct PointValues {
  std::string name;  // "loglik" or "elbo"
  Vec values;
};

int setting_or(const ModelFile &file, const std::string &key, int fallback) {
  if (file.config.contains(key) && file.config.at(key).is_number_integer()) return file.config.at(key).get<int>();
  return fallback;
}

PointValues evaluate(const ModelFile &file, const std::string &data, int samples, std::uint64_t seed) {
  RandomSource rng(seed);
  return std::visit(
      [&](const auto &m) -> PointValues {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, ppca::PpcaParams>) {
          const Mat x = read_table(data);
          Vec v(x.rows());
          for (Eigen::Index i = 0; i < x.rows(); ++i) v[i] = ppca::log_likelihood(m, x.row(i));
          return {"loglik", v};
        } else if constexpr (std::is_same_v<T, mixture::GmmParams>) {
          const Mat x = read_table(data);
          if (x.cols() != m.dim()) throw UsageError("data has " + std::to_string(x.cols()) + " columns, model expects " + std::to_string(m.dim()));
          return {"loglik", mixture::gmm_e_step(m, x).point_loglik};
        } else if constexpr (std::is_same_v<T, mixture::LcaParams>) {
          const IntMat x = read_codes(data);
          mixture::check_codes(x, m.categories());
          return {"loglik", mixture::lca_e_step(m, x).point_loglik};
        } else if constexpr (std::is_same_v<T, irt::IrtParams>) {
          return {"loglik", irt::person_loglik(m, read_codes(data),
                                               irt::QuadratureRule::gauss_hermite(setting_or(file, "quad_points", 41)))};
        } else if constexpr (std::is_same_v<T, ds::LdaModel>) {
          const lda::Corpus c = ds::read_corpus(data);
          if (c.vocab_size > m.hyper.vocab()) throw UsageError("corpus vocabulary exceeds the model's");
          lda::Corpus padded = c;
          padded.vocab_size = static_cast<int>(m.hyper.vocab());
          const auto post = lda::infer_documents(m.hyper.alpha, m.log_topics(), padded);
          Vec v(static_cast<Eigen::Index>(post.size()));
          for (std::size_t d = 0; d < post.size(); ++d) v[static_cast<Eigen::Index>(d)] = post[d].bound;
          return {"elbo", v};
        } else if constexpr (std::is_same_v<T, sequential::HmmParams>) {
          const auto seqs = read_seqs(data, m.kind == sequential::EmissionKind::discrete);
          Vec v(static_cast<Eigen::Index>(seqs.size()));
          for (std::size_t i = 0; i < seqs.size(); ++i) v[static_cast<Eigen::Index>(i)] = sequential::hmm_forward_backward(m, seqs[i]).loglik;
          return {"loglik", v};
        } else if constexpr (std::is_same_v<T, sequential::LdsParams>) {
          const auto seqs = read_seqs(data, false);
          Vec v(static_cast<Eigen::Index>(seqs.size()));
          for (std::size_t i = 0; i < seqs.size(); ++i) v[static_cast<Eigen::Index>(i)] = sequential::kalman_filter(m, seqs[i]).loglik;
          return {"loglik", v};
        } else if constexpr (std::is_same_v<T, ds::MarkovChain>) {
          return {"loglik", m.log_likelihood(read_codes(data))};
        } else if constexpr (std::is_same_v<T, vae::VaeModel>) {
          const Mat x = read_table(data);
          Vec v(x.rows());
          for (Eigen::Index i = 0; i < x.rows(); ++i) v[i] = vae::elbo(m, x.row(i), rng, samples).elbo;
          return {"elbo", v};
        } else if constexpr (std::is_same_v<T, flow::FlowModel>) {
          return {"loglik", flow::log_likelihood(m, read_table(data))};
        } else if constexpr (std::is_same_v<T, diffusion::DiffusionModel>) {
          const Mat x = read_table(data);
          Vec v = Vec::Zero(x.rows());
          for (int r = 0; r < samples; ++r) v += diffusion::point_elbo(m, x, rng);
          return {"elbo", v / samples};
        } else if constexpr (std::is_same_v<T, arm::ArModel>) {
          return {"loglik", arm::log_likelihood(m, read_codes(data))};
        } else {
          throw UsageError("gan models define no likelihood to evaluate");
        }
      },
      file.model);
}

// ---------------------------------------------------------------- infer

ds::Dataset infer_table(const ModelFile &file, const std::string &data) {
  return std::visit(
      [&](const auto &m) -> ds::Dataset {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, ppca::PpcaParams>) {
          const Mat x = read_table(data);
          Mat z(x.rows(), m.latent_dim());
          for (Eigen::Index i = 0; i < x.rows(); ++i) z.row(i) = ppca::posterior(m, x.row(i).transpose()).mean.transpose();
          return ds::Dataset::from(z, "z");
        } else if constexpr (std::is_same_v<T, mixture::GmmParams>) {
          const Mat x = read_table(data);
          if (x.cols() != m.dim()) throw UsageError("data has " + std::to_string(x.cols()) + " columns, model expects " + std::to_string(m.dim()));
          return ds::Dataset::from(mixture::gmm_e_step(m, x).gamma, "r");
        } else if constexpr (std::is_same_v<T, mixture::LcaParams>) {
          const IntMat x = read_codes(data);
          mixture::check_codes(x, m.categories());
          return ds::Dataset::from(mixture::lca_e_step(m, x).gamma, "r");
        } else if constexpr (std::is_same_v<T, irt::IrtParams>) {
          const IntMat x = read_codes(data);
          const auto quad = irt::QuadratureRule::gauss_hermite(setting_or(file, "quad_points", 41));
          Mat out(x.rows(), 2);
          for (Eigen::Index i = 0; i < x.rows(); ++i) {
            const auto p = irt::posterior_theta(m, x.row(i).transpose(), quad);
            out.row(i) << p.eap, p.sd;
          }
          return {{"eap", "sd"}, out};
        } else if constexpr (std::is_same_v<T, ds::LdaModel>) {
          lda::Corpus c = ds::read_corpus(data);
          if (c.vocab_size > m.hyper.vocab()) throw UsageError("corpus vocabulary exceeds the model's");
          c.vocab_size = static_cast<int>(m.hyper.vocab());
          const auto post = lda::infer_documents(m.hyper.alpha, m.log_topics(), c);
          Mat out(static_cast<Eigen::Index>(post.size()), m.hyper.topics());
          for (std::size_t d = 0; d < post.size(); ++d)
            out.row(static_cast<Eigen::Index>(d)) = (post[d].doc_topic / post[d].doc_topic.sum()).transpose();
          return ds::Dataset::from(out, "theta");
        } else if constexpr (std::is_same_v<T, sequential::HmmParams>) {
          const auto seqs = read_seqs(data, m.kind == sequential::EmissionKind::discrete);
          std::vector<std::string> cols{"sequence", "t"};
          for (const auto &n : names("p", m.k())) cols.push_back(n);
          std::vector<Vec> rows;
          for (std::size_t s = 0; s < seqs.size(); ++s) {
            const auto fb = sequential::hmm_forward_backward(m, seqs[s]);
            for (Eigen::Index t = 0; t < fb.gamma.rows(); ++t) {
              Vec r(2 + m.k());
              r << static_cast<double>(s), static_cast<double>(t), fb.gamma.row(t).transpose();
              rows.push_back(r);
            }
          }
          Mat out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
          for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
          return {cols, out};
        } else if constexpr (std::is_same_v<T, sequential::LdsParams>) {
          const auto seqs = read_seqs(data, false);
          const auto dz = m.dz();
          std::vector<std::string> cols{"sequence", "t"};
          for (const auto &n : names("mean", dz)) cols.push_back(n);
          for (const auto &n : names("var", dz)) cols.push_back(n);
          std::vector<Vec> rows;
          for (std::size_t s = 0; s < seqs.size(); ++s) {
            const auto sm = sequential::kalman_smooth(m, seqs[s]);
            for (std::size_t t = 0; t < sm.smoothed.size(); ++t) {
              Vec r(2 + 2 * dz);
              r << static_cast<double>(s), static_cast<double>(t), sm.smoothed[t].mean, sm.smoothed[t].cov.diagonal();
              rows.push_back(r);
            }
          }
          Mat out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
          for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
          return {cols, out};
        } else if constexpr (std::is_same_v<T, vae::VaeModel>) {
          const vae::Encoding e = vae::encode(m, read_table(data));
          Mat out(e.mu.rows(), 2 * e.mu.cols());
          out << e.mu, e.sigma;
          auto cols = names("mu", e.mu.cols());
          for (const auto &n : names("sigma", e.mu.cols())) cols.push_back(n);
          return {cols, out};
        } else {
          throw UsageError("infer is not available for family '" + ds::family_name(m) + "'");
        }
      },
      file.model);
}

// ---------------------------------------------------------------- sample

void sample_model(const ModelFile &file, Eigen::Index n, std::optional<Eigen::Index> length, const std::string &from,
                  const std::string &given, const std::string &out, std::uint64_t seed) {
  RandomSource rng(seed);
  auto need_length = [&]() -> Eigen::Index {
    if (!length) throw UsageError("--length is required to sample family '" + ds::family_name(file.model) + "'");
    return *length;
  };
  if (from != "prior" && from != "posterior") throw UsageError("--from must be 'prior' or 'posterior'");
  if (from == "posterior" && !std::holds_alternative<ppca::PpcaParams>(file.model))
    throw UsageError("posterior sampling is only available for ppca");
  if (!given.empty() && from != "posterior") throw UsageError("--given requires --from posterior");
  std::visit(
      [&](const auto &m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, ppca::PpcaParams>) {
          if (from == "prior") {
            ds::write_csv(out, ds::Dataset::from(ppca::sample(m, n, rng)));
            return;
          }
          if (given.empty()) throw UsageError("--from posterior requires --given");
          const Mat obs = read_table(given);
          if (obs.cols() != m.data_dim()) throw UsageError("--given rows must have the model's data dimension");
          // n draws per given row, rows in order.
          Mat all(n * obs.rows(), m.data_dim());
          for (Eigen::Index r = 0; r < obs.rows(); ++r)
            all.middleRows(r * n, n) = ppca::sample(m, n, rng, ppca::SampleFrom::posterior, Vec(obs.row(r).transpose()));
          ds::write_csv(out, ds::Dataset::from(all));
        } else if constexpr (std::is_same_v<T, mixture::GmmParams> || std::is_same_v<T, mixture::LcaParams> ||
                             std::is_same_v<T, irt::IrtParams> || std::is_same_v<T, sequential::HmmParams> ||
                             std::is_same_v<T, sequential::LdsParams> || std::is_same_v<T, ds::MarkovChain>) {
          ds::SyntheticSpec spec;
          spec.truth = m;
          spec.n = n;
          spec.seed = seed;
          const std::string fam = ds::family_name(m);
          spec.family = fam == "markov" ? "markov-seq" : fam;
          if (fam == "hmm" || fam == "ghmm" || fam == "lds" || fam == "markov") spec.length = need_length();
          const ds::Synthetic syn = ds::generate(spec);
          if (syn.sequences.seqs.size()) ds::write_sequences(out, syn.sequences);
          else if (syn.codes.size()) ds::write_csv(out, ds::Dataset::from(syn.codes));
          else ds::write_csv(out, ds::Dataset::from(syn.data));
        } else if constexpr (std::is_same_v<T, ds::LdaModel>) {
          // Topics fixed at the model's point (or posterior-mean) estimate.
          Mat phi = m.topics;
          if (m.form == ds::LdaModel::Topics::concentration)
            for (Eigen::Index k = 0; k < phi.rows(); ++k) phi.row(k) /= phi.row(k).sum();
          std::vector<Simplex> topics;
          for (Eigen::Index k = 0; k < phi.rows(); ++k) topics.push_back(Simplex::normalized(phi.row(k).transpose()));
          const Eigen::Index len = need_length();
          lda::Corpus c{{}, static_cast<int>(m.hyper.vocab())};
          for (Eigen::Index d = 0; d < n; ++d) {
            const Simplex theta = sample_dirichlet(m.hyper.alpha, rng);
            std::vector<int> doc;
            for (Eigen::Index i = 0; i < len; ++i)
              doc.push_back(static_cast<int>(sample_categorical(topics[static_cast<std::size_t>(sample_categorical(theta, rng))], rng)));
            c.docs.push_back(std::move(doc));
          }
          ds::write_corpus(out, c);
        } else if constexpr (std::is_same_v<T, vae::VaeModel>) {
          ds::write_csv(out, ds::Dataset::from(vae::sample(m, n, rng, m.likelihood == vae::Likelihood::bernoulli)));
        } else if constexpr (std::is_same_v<T, flow::FlowModel>) {
          ds::write_csv(out, ds::Dataset::from(flow::sample(m, n, rng)));
        } else if constexpr (std::is_same_v<T, diffusion::DiffusionModel>) {
          ds::write_csv(out, ds::Dataset::from(diffusion::sample(m, n, rng)));
        } else if constexpr (std::is_same_v<T, arm::ArModel>) {
          ds::write_csv(out, ds::Dataset::from(arm::sample(m, n, rng)));
        } else {
          ds::write_csv(out, ds::Dataset::from(gan::generate(m, n, rng)));
        }
      },
      file.model);
}

// ---------------------------------------------------------------- synth

void write_synthetic(const ds::Synthetic &s, const Json &spec_json, std::uint64_t seed, const std::string &out) {
  if (s.family == "lda") {
    ds::write_corpus(out, s.corpus);
    ds::write_csv(out + ".latents.csv", ds::Dataset::from(s.latents, "theta"));
  } else if (!s.sequences.seqs.empty()) {
    ds::write_sequences(out, s.sequences);
    ds::SequenceSet paths{s.family != "lds", s.family == "lds" ? static_cast<int>(s.latent_paths.front().cols()) : 1,
                          s.latent_paths};
    ds::write_sequences(out + ".latents.seq", paths);
  } else {
    ds::write_csv(out, s.codes.size() ? ds::Dataset::from(s.codes) : ds::Dataset::from(s.data));
    if (s.latents.size()) {
      const bool labels = s.family == "gmm" || s.family == "lca" || s.family == "mixture1d" || s.family == "blobs2d";
      ds::write_csv(out + ".latents.csv", ds::Dataset::from(s.latents, labels ? "label" : (s.family == "irt" ? "theta" : "z")));
    }
  }
  ds::write_model(out + ".truth.json", {s.truth, {{"synth", spec_json}}, seed});
}

// ---------------------------------------------------------------- output

void print_values(std::ostream &os, const PointValues &v) {
  os << "point," << v.name << '\n';
  for (Eigen::Index i = 0; i < v.values.size(); ++i) os << i << ',' << ds::format_number(v.values[i]) << '\n';
  os << "total," << ds::format_number(v.values.sum()) << '\n';
}

// Bare words become strings: --set method=closed.
Json parse_json_value(const std::string &text) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error &) {
    return Json(text);
  }
}

Json read_config(const std::string &path) {
  if (path.empty()) return Json::object();
  Json j;
  try {
    j = Json::parse(ds::read_text(path));
  } catch (const Json::parse_error &e) {
    throw UsageError("config '" + path + "' is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw UsageError("config '" + path + "' must hold a JSON object");
  return j;
}

}  // namespace

int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err) {
  CLI::App app{"latent variable model toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("latentlab 1.0"));

  // fit
  std::string family, data, model_out, config_path;
  std::uint64_t seed = 0;
  std::optional<long long> k, latent_dim, steps_t, epochs, batch, max_iters;
  std::optional<double> lr, rel_tol;
  std::vector<int> hidden;
  std::vector<std::string> sets;
  auto *fit = app.add_subcommand("fit", "fit a model family to data; writes <out> and <out>.trace.csv");
  fit->add_option("family", family, "model family")->required();
  fit->add_option("--data", data, "training data (csv, sequence or corpus file)")->required();
  fit->add_option("--out", model_out, "model JSON to write")->required();
  fit->add_option("--config", config_path, "JSON settings; flags override it");
  fit->add_option("--seed", seed, "random seed");
  fit->add_option("--k", k, "components, classes, states or topics");
  fit->add_option("--latent-dim", latent_dim, "latent dimension");
  fit->add_option("--T", steps_t, "diffusion steps");
  fit->add_option("--epochs", epochs);
  fit->add_option("--batch", batch);
  fit->add_option("--max-iters", max_iters);
  fit->add_option("--lr", lr);
  fit->add_option("--rel-tol", rel_tol);
  fit->add_option("--hidden", hidden, "hidden widths")->delimiter(',');
  fit->add_option("--set", sets, "key=value setting (value parsed as JSON)");

  // sample
  std::string model_in, from = "prior", given;
  long long n = 0;
  std::optional<long long> length;
  auto *sample = app.add_subcommand("sample", "draw from a fitted model");
  sample->add_option("model", model_in)->required();
  sample->add_option("--n", n, "number of draws")->required()->check(CLI::PositiveNumber);
  sample->add_option("--out", model_out, "file to write")->required();
  sample->add_option("--from", from, "prior or posterior (ppca)");
  sample->add_option("--given", given, "csv of observations for posterior draws");
  sample->add_option("--length", length, "sequence or document length")->check(CLI::PositiveNumber);
  sample->add_option("--seed", seed);

  // eval, infer, reconstruct
  std::string result_out;
  int samples = 0;
  auto *eval = app.add_subcommand("eval", "per-point log-likelihood or ELBO and the total");
  eval->add_option("model", model_in)->required();
  eval->add_option("--data", data)->required();
  eval->add_option("--out", result_out, "write the table here instead of standard output");
  eval->add_option("--samples", samples, "Monte Carlo draws per point (vae, diffusion)")->check(CLI::PositiveNumber);
  eval->add_option("--seed", seed);
  auto *infer = app.add_subcommand("infer", "posterior summaries per point");
  infer->add_option("model", model_in)->required();
  infer->add_option("--data", data)->required();
  infer->add_option("--out", result_out)->required();
  auto *reconstruct = app.add_subcommand("reconstruct", "reconstruct data through the latent space (ppca, vae)");
  reconstruct->add_option("model", model_in)->required();
  reconstruct->add_option("--data", data)->required();
  reconstruct->add_option("--out", result_out)->required();

  // synth
  std::string spec_path;
  std::optional<std::uint64_t> synth_seed;
  auto *synth = app.add_subcommand("synth", "generate a synthetic dataset with ground truth");
  synth->add_option("spec", spec_path)->required();
  synth->add_option("--out", result_out, "data file; <out>.truth.json and latents beside it")->required();
  synth->add_option("--seed", synth_seed, "overrides the spec's seed");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp &) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp &) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion &) {
    out << "latentlab 1.0\n";
    return kExitOk;
  } catch (const CLI::ParseError &e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (fit->parsed()) {
      const Family &info = family_info(family);
      Json flags = Json::object();
      auto put = [&](const char *flag, const std::string &key, const Json &value) {
        if (!info.defaults.contains(key)) throw UsageError(std::string("option ") + flag + " does not apply to family '" + family + "'");
        flags[key] = value;
      };
      if (k) put("--k", "k", *k);
      if (latent_dim) put("--latent-dim", "latent_dim", *latent_dim);
      if (steps_t) put("--T", "steps", *steps_t);
      if (epochs) put("--epochs", "epochs", *epochs);
      if (batch) put("--batch", "batch", *batch);
      if (max_iters) put("--max-iters", "max_iters", *max_iters);
      if (lr) put("--lr", "lr", *lr);
      if (rel_tol) put("--rel-tol", "rel_tol", *rel_tol);
      if (!hidden.empty()) put("--hidden", "hidden", hidden);
      for (const auto &s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + s + "'");
        const std::string key = s.substr(0, eq);
        if (!info.defaults.contains(key)) throw UsageError("setting '" + key + "' is not recognized for family '" + family + "'");
        flags[key] = parse_json_value(s.substr(eq + 1));
      }
      const Settings settings = merge_settings(family, read_config(config_path), flags);
      Fitted f = fit_family(family, settings, data, seed);
      if (info.em) f.model = ds::canonicalize(f.model);
      ds::write_model(model_out, {f.model, settings.json(), seed});
      write_trace(model_out + ".trace.csv", f.trace);
    } else if (sample->parsed()) {
      sample_model(ds::read_model(model_in), n, length, from, given, model_out, seed);
    } else if (eval->parsed()) {
      const ModelFile file = ds::read_model(model_in);
      const int draws = samples > 0 ? samples : setting_or(file, "eval_samples", 16);
      const PointValues v = evaluate(file, data, draws, seed);
      if (!result_out.empty()) {
        std::ostringstream os;
        print_values(os, v);
        ds::write_text(result_out, os.str());
      } else {
        print_values(out, v);
      }
    } else if (infer->parsed()) {
      ds::write_csv(result_out, infer_table(ds::read_model(model_in), data));
    } else if (reconstruct->parsed()) {
      const ModelFile file = ds::read_model(model_in);
      const Mat x = read_table(data);
      Mat r(x.rows(), x.cols());
      if (const auto *p = std::get_if<ppca::PpcaParams>(&file.model)) {
        if (x.cols() != p->data_dim()) throw UsageError("data dimension does not match the model");
        for (Eigen::Index i = 0; i < x.rows(); ++i) r.row(i) = ppca::reconstruct(*p, x.row(i).transpose()).transpose();
      } else if (const auto *v = std::get_if<vae::VaeModel>(&file.model)) {
        r = vae::reconstruct(*v, x);
      } else {
        throw UsageError("reconstruct is available for ppca and vae only");
      }
      ds::write_csv(result_out, ds::Dataset::from(r));
    } else if (synth->parsed()) {
      Json spec_json;
      try {
        spec_json = Json::parse(ds::read_text(spec_path));
      } catch (const Json::parse_error &e) {
        throw UsageError("spec '" + spec_path + "' is not valid JSON: " + e.what());
      }
      if (synth_seed) spec_json["seed"] = *synth_seed;
      const ds::SyntheticSpec spec = ds::spec_from_json(spec_json);
      write_synthetic(ds::generate(spec), spec_json, spec.seed, result_out);
    }
  } catch (const NumericError &e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::invalid_argument &e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::bad_variant_access &) {
    err << "error: model family does not match the requested operation\n";
    return kExitUsage;
  } catch (const std::exception &e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  }
  return kExitOk;
}

}  // namespace latentlab::cli
