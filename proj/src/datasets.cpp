#include "latentlab/datasets.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace latentlab::datasets {

namespace {

// ---------------------------------------------------------------- text

// Lines without terminators; a trailing '\r' is dropped so CRLF == LF. The
// empty piece after a final newline is not a line.
std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = end + 1;
  }
  return lines;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_whitespace(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    const std::size_t start = i;
    while (i < s.size() && s[i] != ' ' && s[i] != '\t') ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

double parse_double(std::string_view token, std::size_t line) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
  if (token.empty() || ec != std::errc() || ptr != token.data() + token.size())
    throw FormatError(line, "not a number: '" + std::string(token) + "'");
  return v;
}

int parse_int(std::string_view token, std::size_t line) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
  if (token.empty() || ec != std::errc() || ptr != token.data() + token.size())
    throw FormatError(line, "not an integer: '" + std::string(token) + "'");
  return v;
}

// Value of a "key=<n>" header line, or -1 when the line is not that header.
int header_value(std::string_view line, std::string_view key, std::size_t lineno) {
  line = trim(line);
  if (line.substr(0, key.size()) != key || line.size() <= key.size() || line[key.size()] != '=') return -1;
  const int v = parse_int(trim(line.substr(key.size() + 1)), lineno);
  if (v < 1) throw FormatError(lineno, std::string(key) + " must be positive");
  return v;
}

// ---------------------------------------------------------------- json

// Object reader that rejects keys nobody asked for.
class Fields {
public:
  Fields(const Json &j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) fail("", "must be an object");
  }

  [[nodiscard]] const Json &at(const std::string &key) {
    if (!j_.contains(key)) fail(key, "is missing");
    used_.push_back(key);
    return j_.at(key);
  }
  [[nodiscard]] bool has(const std::string &key) const { return j_.contains(key); }
  [[nodiscard]] std::string path(const std::string &key) const { return where_.empty() ? key : where_ + "." + key; }

  [[noreturn]] void fail(const std::string &key, const std::string &what) const {
    throw InvalidArgument("field '" + (key.empty() ? where_ : path(key)) + "' " + what);
  }

  double number(const std::string &key) {
    const Json &v = at(key);
    if (!v.is_number()) fail(key, "must be a number");
    return v.get<double>();
  }
  long long integer(const std::string &key) {
    const Json &v = at(key);
    if (!v.is_number_integer()) fail(key, "must be an integer");
    return v.get<long long>();
  }
  std::string text(const std::string &key) {
    const Json &v = at(key);
    if (!v.is_string()) fail(key, "must be a string");
    return v.get<std::string>();
  }
  Vec vec(const std::string &key) { return to_vec(at(key), path(key)); }
  Mat mat(const std::string &key) { return to_mat(at(key), path(key)); }
  std::vector<int> ints(const std::string &key) {
    const Json &v = at(key);
    if (!v.is_array()) fail(key, "must be an array of integers");
    std::vector<int> out;
    for (const auto &e : v) {
      if (!e.is_number_integer()) fail(key, "must be an array of integers");
      out.push_back(e.get<int>());
    }
    return out;
  }
  const Json &array(const std::string &key) {
    const Json &v = at(key);
    if (!v.is_array()) fail(key, "must be an array");
    return v;
  }

  void done() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (std::find(used_.begin(), used_.end(), it.key()) == used_.end()) fail(it.key(), "is not recognized");
  }

  static Vec to_vec(const Json &v, const std::string &where) {
    if (!v.is_array()) throw InvalidArgument("field '" + where + "' must be an array of numbers");
    Vec out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) throw InvalidArgument("field '" + where + "' must be an array of numbers");
      out[static_cast<Eigen::Index>(i)] = v[i].get<double>();
    }
    return out;
  }
  static Mat to_mat(const Json &v, const std::string &where) {
    if (!v.is_array()) throw InvalidArgument("field '" + where + "' must be an array of rows");
    if (v.empty()) return Mat(0, 0);
    const std::size_t cols = v[0].is_array() ? v[0].size() : 0;
    Mat out(static_cast<Eigen::Index>(v.size()), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < v.size(); ++r) {
      if (!v[r].is_array() || v[r].size() != cols)
        throw InvalidArgument("field '" + where + "' rows must be arrays of equal length");
      out.row(static_cast<Eigen::Index>(r)) = to_vec(v[r], where).transpose();
    }
    return out;
  }

private:
  const Json &j_;
  std::string where_;
  std::vector<std::string> used_;
};

void check_finite(const double *p, Eigen::Index n, const std::string &key) {
  for (Eigen::Index i = 0; i < n; ++i)
    if (!std::isfinite(p[i])) throw InvalidArgument("model: non-finite value in '" + key + "'");
}

Json vec_json(const Vec &v, const std::string &key) {
  check_finite(v.data(), v.size(), key);
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

Json mat_json(const Mat &m, const std::string &key) {
  check_finite(m.data(), m.size(), key);
  Json out = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) out.push_back(vec_json(m.row(r).transpose(), key));
  return out;
}

Json ints_json(const std::vector<int> &v) { return Json(v); }

Json mlp_json(const nn::Mlp &mlp, const std::string &key) {
  Json layers = Json::array();
  for (const auto &d : mlp.layers())
    layers.push_back({{"weight", mat_json(d.weight.value(), key)},
                      {"bias", vec_json(d.bias.value().row(0).transpose(), key)},
                      {"activation", nn::activation_name(d.act)}});
  return {{"layers", layers}};
}

nn::Activation activation_field(Fields &f, const std::string &key) {
  const std::string name = f.text(key);
  try {
    return nn::activation_from_name(name);
  } catch (const InvalidArgument &) {
    f.fail(key, "names an unknown activation '" + name + "'");
  }
}

Mat row_matrix(const Vec &v) { return v.transpose(); }

nn::Mlp mlp_from(const Json &j, const std::string &where) {
  Fields f(j, where);
  std::vector<nn::Dense> layers;
  const Json &arr = f.array("layers");
  for (std::size_t i = 0; i < arr.size(); ++i) {
    Fields l(arr[i], f.path("layers[" + std::to_string(i) + "]"));
    nn::Dense d{nn::Tensor::parameter(l.mat("weight")), nn::Tensor::parameter(row_matrix(l.vec("bias"))),
                activation_field(l, "activation")};
    l.done();
    layers.push_back(std::move(d));
  }
  f.done();
  if (layers.empty()) f.fail("layers", "must not be empty");
  try {
    return nn::Mlp(std::move(layers));
  } catch (const InvalidArgument &e) {
    f.fail("layers", e.what());
  }
}

Json masked_json(const arm::MaskedLinear &l) {
  return {{"weight", mat_json(l.weight.value(), "weight")},
          {"bias", vec_json(l.bias.value().row(0).transpose(), "bias")},
          {"mask", mat_json(l.mask, "mask")}};
}

arm::MaskedLinear masked_from(const Json &j, const std::string &where) {
  Fields f(j, where);
  arm::MaskedLinear l{nn::Tensor::parameter(f.mat("weight")), nn::Tensor::parameter(row_matrix(f.vec("bias"))),
                      f.mat("mask")};
  f.done();
  return l;
}

Simplex simplex_field(Fields &f, const std::string &key) {
  try {
    return Simplex(f.vec(key));
  } catch (const InvalidArgument &e) {
    f.fail(key, std::string("is not a probability vector: ") + e.what());
  }
}

// ---------------------------------------------------------------- params

Json params_json(const Model &model) {
  return std::visit(
      [](const auto &m) -> Json {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, ppca::PpcaParams>) {
          return {{"W", mat_json(m.W, "W")}, {"mu", vec_json(m.mu, "mu")}, {"sigma2", m.sigma2}};
        } else if constexpr (std::is_same_v<T, mixture::GmmParams>) {
          Json means = Json::array(), covs = Json::array();
          for (const auto &v : m.means) means.push_back(vec_json(v, "means"));
          for (const auto &c : m.covs) covs.push_back(mat_json(c, "covs"));
          return {{"weights", vec_json(m.weights.probs(), "weights")}, {"means", means}, {"covs", covs}};
        } else if constexpr (std::is_same_v<T, mixture::LcaParams>) {
          Json classes = Json::array();
          for (const auto &tables : m.item_probs) {
            Json items = Json::array();
            for (const auto &t : tables) items.push_back(vec_json(t.probs(), "item_probs"));
            classes.push_back(items);
          }
          return {{"weights", vec_json(m.weights.probs(), "weights")}, {"item_probs", classes}};
        } else if constexpr (std::is_same_v<T, irt::IrtParams>) {
          return {{"a", vec_json(m.a, "a")}, {"b", vec_json(m.b, "b")}};
        } else if constexpr (std::is_same_v<T, LdaModel>) {
          return {{"alpha", vec_json(m.hyper.alpha, "alpha")},
                  {"beta", vec_json(m.hyper.beta, "beta")},
                  {"topics", mat_json(m.topics, "topics")},
                  {"topic_form", m.form == LdaModel::Topics::concentration ? "concentration" : "probability"}};
        } else if constexpr (std::is_same_v<T, sequential::HmmParams>) {
          Json out = {{"pi", vec_json(m.pi.probs(), "pi")}, {"trans", mat_json(m.trans, "trans")}};
          if (m.kind == sequential::EmissionKind::discrete) {
            Json emit = Json::array();
            for (const auto &e : m.emit_probs) emit.push_back(vec_json(e.probs(), "emit"));
            out["emit"] = emit;
          } else {
            Json means = Json::array(), covs = Json::array();
            for (const auto &g : m.emit_gauss) {
              means.push_back(vec_json(g.mean, "means"));
              covs.push_back(mat_json(g.cov, "covs"));
            }
            out["means"] = means;
            out["covs"] = covs;
          }
          return out;
        } else if constexpr (std::is_same_v<T, sequential::LdsParams>) {
          return {{"A", mat_json(m.A, "A")},   {"C", mat_json(m.C, "C")},       {"Q", mat_json(m.Q, "Q")},
                  {"R", mat_json(m.R, "R")},   {"mu0", vec_json(m.mu0, "mu0")}, {"Sigma0", mat_json(m.Sigma0, "Sigma0")}};
        } else if constexpr (std::is_same_v<T, MarkovChain>) {
          return {{"init", vec_json(m.init.probs(), "init")}, {"trans", mat_json(m.trans, "trans")}};
        } else if constexpr (std::is_same_v<T, vae::VaeModel>) {
          return {{"latent", m.latent},
                  {"likelihood", m.likelihood == vae::Likelihood::gaussian ? "gaussian" : "bernoulli"},
                  {"sigma_dec", m.sigma_dec},
                  {"encoder", mlp_json(m.encoder, "encoder")},
                  {"decoder", mlp_json(m.decoder, "decoder")}};
        } else if constexpr (std::is_same_v<T, flow::FlowModel>) {
          Json layers = Json::array();
          for (const auto &layer : m.layers) {
            std::visit(
                [&](const auto &l) {
                  using L = std::decay_t<decltype(l)>;
                  if constexpr (std::is_same_v<L, flow::PlanarLayer>)
                    layers.push_back({{"type", "planar"}, {"u", vec_json(l.u, "u")}, {"w", vec_json(l.w, "w")}, {"b", l.b}});
                  else if constexpr (std::is_same_v<L, flow::CouplingLayer>)
                    layers.push_back({{"type", "coupling"},
                                      {"cond", ints_json(l.cond)},
                                      {"trans", ints_json(l.trans)},
                                      {"s_net", mlp_json(l.s_net, "s_net")},
                                      {"t_net", mlp_json(l.t_net, "t_net")}});
                  else
                    layers.push_back({{"type", "permutation"}, {"perm", ints_json(l.perm)}});
                },
                layer);
          }
          return {{"dim", m.dim}, {"layers", layers}};
        } else if constexpr (std::is_same_v<T, diffusion::DiffusionModel>) {
          return {{"dim", m.dim}, {"betas", vec_json(m.schedule.betas(), "betas")}, {"eps_net", mlp_json(m.eps_net, "eps_net")}};
        } else if constexpr (std::is_same_v<T, arm::ArModel>) {
          Json hidden = Json::array();
          for (const auto &l : m.hidden) hidden.push_back(masked_json(l));
          return {{"length", m.length},
                  {"alphabet", m.alphabet},
                  {"activation", nn::activation_name(m.activation)},
                  {"hidden", hidden},
                  {"output", masked_json(m.output)},
                  {"skip", masked_json(m.skip)}};
        } else {
          return {{"prior_dim", m.prior_dim}, {"gen", mlp_json(m.gen, "gen")}, {"disc", mlp_json(m.disc, "disc")}};
        }
      },
      model);
}

std::vector<Simplex> simplex_list(Fields &f, const std::string &key) {
  std::vector<Simplex> out;
  const Json &arr = f.array(key);
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string where = f.path(key) + "[" + std::to_string(i) + "]";
    try {
      out.emplace_back(Fields::to_vec(arr[i], where));
    } catch (const InvalidArgument &e) {
      throw InvalidArgument("field '" + where + "' is not a probability vector: " + e.what());
    }
  }
  return out;
}

std::vector<Vec> vec_list(Fields &f, const std::string &key) {
  std::vector<Vec> out;
  const Json &arr = f.array(key);
  for (std::size_t i = 0; i < arr.size(); ++i) out.push_back(Fields::to_vec(arr[i], f.path(key) + "[" + std::to_string(i) + "]"));
  return out;
}

std::vector<Mat> mat_list(Fields &f, const std::string &key) {
  std::vector<Mat> out;
  const Json &arr = f.array(key);
  for (std::size_t i = 0; i < arr.size(); ++i) out.push_back(Fields::to_mat(arr[i], f.path(key) + "[" + std::to_string(i) + "]"));
  return out;
}

int positive_int(Fields &f, const std::string &key) {
  const long long v = f.integer(key);
  if (v < 1 || v > std::numeric_limits<int>::max()) f.fail(key, "must be a positive integer");
  return static_cast<int>(v);
}

void validate_model(const Model &model) {
  std::visit([](const auto &m) { m.validate(); }, model);
}

// Parses the params object of `family` (a model-file family name).
Model params_from(const std::string &family, const Json &j, const std::string &where) {
  Fields f(j, where);
  Model model;
  if (family == "ppca") {
    model = ppca::PpcaParams{f.mat("W"), f.vec("mu"), f.number("sigma2")};
  } else if (family == "gmm") {
    model = mixture::GmmParams{simplex_field(f, "weights"), vec_list(f, "means"), mat_list(f, "covs")};
  } else if (family == "lca") {
    mixture::LcaParams p{simplex_field(f, "weights"), {}};
    const Json &classes = f.array("item_probs");
    for (std::size_t c = 0; c < classes.size(); ++c) {
      const std::string cw = f.path("item_probs") + "[" + std::to_string(c) + "]";
      if (!classes[c].is_array()) throw InvalidArgument("field '" + cw + "' must be an array");
      std::vector<Simplex> tables;
      for (std::size_t i = 0; i < classes[c].size(); ++i) {
        const std::string iw = cw + "[" + std::to_string(i) + "]";
        try {
          tables.emplace_back(Fields::to_vec(classes[c][i], iw));
        } catch (const InvalidArgument &e) {
          throw InvalidArgument("field '" + iw + "' is not a probability vector: " + e.what());
        }
      }
      p.item_probs.push_back(std::move(tables));
    }
    model = std::move(p);
  } else if (family == "irt") {
    model = irt::IrtParams{f.vec("a"), f.vec("b")};
  } else if (family == "lda") {
    LdaModel m{{f.vec("alpha"), f.vec("beta")}, Mat(0, 0), LdaModel::Topics::concentration};
    if (f.has("topics")) m.topics = f.mat("topics");
    if (f.has("topic_form")) {
      const std::string form = f.text("topic_form");
      if (form == "probability") m.form = LdaModel::Topics::probability;
      else if (form != "concentration") f.fail("topic_form", "must be 'concentration' or 'probability'");
    }
    model = std::move(m);
  } else if (family == "hmm" || family == "ghmm") {
    sequential::HmmParams p;
    p.pi = simplex_field(f, "pi");
    p.trans = f.mat("trans");
    if (family == "hmm") {
      p.kind = sequential::EmissionKind::discrete;
      p.emit_probs = simplex_list(f, "emit");
    } else {
      p.kind = sequential::EmissionKind::gaussian;
      const auto means = vec_list(f, "means");
      const auto covs = mat_list(f, "covs");
      if (means.size() != covs.size()) f.fail("covs", "must have one entry per mean");
      for (std::size_t i = 0; i < means.size(); ++i) p.emit_gauss.emplace_back(means[i], covs[i]);
    }
    model = std::move(p);
  } else if (family == "lds") {
    model = sequential::LdsParams{f.mat("A"), f.mat("C"), f.mat("Q"), f.mat("R"), f.vec("mu0"), f.mat("Sigma0")};
  } else if (family == "markov") {
    model = MarkovChain{simplex_field(f, "init"), f.mat("trans")};
  } else if (family == "vae") {
    vae::VaeModel m;
    m.latent = positive_int(f, "latent");
    const std::string lik = f.text("likelihood");
    if (lik == "gaussian") m.likelihood = vae::Likelihood::gaussian;
    else if (lik == "bernoulli") m.likelihood = vae::Likelihood::bernoulli;
    else f.fail("likelihood", "must be 'gaussian' or 'bernoulli'");
    m.sigma_dec = f.number("sigma_dec");
    m.encoder = mlp_from(f.at("encoder"), f.path("encoder"));
    m.decoder = mlp_from(f.at("decoder"), f.path("decoder"));
    model = std::move(m);
  } else if (family == "flow") {
    flow::FlowModel m;
    m.dim = positive_int(f, "dim");
    const Json &layers = f.array("layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      Fields l(layers[i], f.path("layers[" + std::to_string(i) + "]"));
      const std::string type = l.text("type");
      if (type == "planar") {
        m.layers.emplace_back(flow::PlanarLayer{l.vec("u"), l.vec("w"), l.number("b")});
      } else if (type == "coupling") {
        flow::CouplingLayer c;
        c.cond = l.ints("cond");
        c.trans = l.ints("trans");
        c.s_net = mlp_from(l.at("s_net"), l.path("s_net"));
        c.t_net = mlp_from(l.at("t_net"), l.path("t_net"));
        m.layers.emplace_back(std::move(c));
      } else if (type == "permutation") {
        m.layers.emplace_back(flow::PermutationLayer{l.ints("perm")});
      } else {
        l.fail("type", "must be 'planar', 'coupling' or 'permutation'");
      }
      l.done();
    }
    model = std::move(m);
  } else if (family == "diffusion") {
    diffusion::DiffusionModel m;
    m.dim = positive_int(f, "dim");
    try {
      m.schedule = diffusion::NoiseSchedule(f.vec("betas"));
    } catch (const InvalidArgument &e) {
      f.fail("betas", e.what());
    }
    m.eps_net = mlp_from(f.at("eps_net"), f.path("eps_net"));
    model = std::move(m);
  } else if (family == "arm") {
    arm::ArModel m;
    m.length = positive_int(f, "length");
    m.alphabet = positive_int(f, "alphabet");
    m.activation = activation_field(f, "activation");
    const Json &hidden = f.array("hidden");
    for (std::size_t i = 0; i < hidden.size(); ++i)
      m.hidden.push_back(masked_from(hidden[i], f.path("hidden[" + std::to_string(i) + "]")));
    m.output = masked_from(f.at("output"), f.path("output"));
    m.skip = masked_from(f.at("skip"), f.path("skip"));
    model = std::move(m);
  } else if (family == "gan") {
    gan::GanModel m;
    m.prior_dim = positive_int(f, "prior_dim");
    m.gen = mlp_from(f.at("gen"), f.path("gen"));
    m.disc = mlp_from(f.at("disc"), f.path("disc"));
    model = std::move(m);
  } else {
    throw InvalidArgument("unknown model family '" + family + "'");
  }
  f.done();
  return model;
}

// ---------------------------------------------------------------- sampling

Mat normal_mat(Eigen::Index r, Eigen::Index c, RandomSource &rng) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

int draw(const Eigen::Ref<const Eigen::RowVectorXd> &p, RandomSource &rng) {
  return static_cast<int>(sample_categorical(Simplex::normalized(p.transpose()), rng));
}

}  // namespace

FormatError::FormatError(std::size_t line, const std::string &what)
    : InvalidArgument(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

std::string format_number(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  if (ec != std::errc()) throw NumericError("format_number: conversion failed");
  return std::string(buf, ptr);
}

// ---------------------------------------------------------------- csv

Dataset Dataset::from(Mat values, const std::string &prefix) {
  Dataset d;
  for (Eigen::Index j = 0; j < values.cols(); ++j) d.columns.push_back(prefix + std::to_string(j + 1));
  d.values = std::move(values);
  return d;
}

Dataset Dataset::from(const IntMat &codes, const std::string &prefix) { return from(Mat(codes.cast<double>()), prefix); }

IntMat Dataset::codes() const {
  IntMat out(values.rows(), values.cols());
  for (Eigen::Index i = 0; i < values.rows(); ++i)
    for (Eigen::Index j = 0; j < values.cols(); ++j) {
      const double v = values(i, j);
      if (!(std::abs(v) < 2147483647.0) || v != std::floor(v))
        throw FormatError(static_cast<std::size_t>(i) + 2, "column '" + columns[static_cast<std::size_t>(j)] +
                                                               "' holds a non-integer code " + format_number(v));
      out(i, j) = static_cast<int>(v);
    }
  return out;
}

Dataset parse_csv(std::string_view text) {
  const auto lines = split_lines(text);
  if (lines.empty()) throw FormatError(1, "missing header row");
  Dataset d;
  std::size_t start = 0;
  const std::string_view header = lines[0];
  while (start <= header.size()) {
    std::size_t end = header.find(',', start);
    if (end == std::string_view::npos) end = header.size();
    const std::string_view name = trim(header.substr(start, end - start));
    if (name.empty()) throw FormatError(1, "empty column name");
    d.columns.emplace_back(name);
    start = end + 1;
  }
  const auto cols = static_cast<Eigen::Index>(d.columns.size());
  d.values.resize(static_cast<Eigen::Index>(lines.size() - 1), cols);
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const std::string_view line = lines[r];
    Eigen::Index c = 0;
    std::size_t pos = 0;
    while (true) {
      std::size_t end = line.find(',', pos);
      if (end == std::string_view::npos) end = line.size();
      if (c == cols) throw FormatError(r + 1, "expected " + std::to_string(cols) + " fields");
      d.values(static_cast<Eigen::Index>(r - 1), c++) = parse_double(trim(line.substr(pos, end - pos)), r + 1);
      if (end == line.size()) break;
      pos = end + 1;
    }
    if (c != cols)
      throw FormatError(r + 1, "expected " + std::to_string(cols) + " fields, found " + std::to_string(c));
  }
  return d;
}

std::string format_csv(const Dataset &data) {
  if (static_cast<Eigen::Index>(data.columns.size()) != data.values.cols())
    throw InvalidArgument("csv: column names do not match the value width");
  std::string out;
  for (std::size_t j = 0; j < data.columns.size(); ++j) {
    const auto &name = data.columns[j];
    if (name.empty() || name.find_first_of(",\r\n") != std::string::npos)
      throw InvalidArgument("csv: invalid column name '" + name + "'");
    out += (j ? "," : "") + name;
  }
  out += '\n';
  for (Eigen::Index i = 0; i < data.values.rows(); ++i) {
    for (Eigen::Index j = 0; j < data.values.cols(); ++j) {
      if (j) out += ',';
      out += format_number(data.values(i, j));
    }
    out += '\n';
  }
  return out;
}

Dataset read_csv(const std::filesystem::path &path) { return parse_csv(read_text(path)); }
void write_csv(const std::filesystem::path &path, const Dataset &data) { write_text(path, format_csv(data)); }

// ---------------------------------------------------------------- sequences

SequenceSet parse_sequences(std::string_view text) {
  const auto lines = split_lines(text);
  SequenceSet set;
  std::size_t first = 0;
  if (!lines.empty()) {
    const int dx = header_value(lines[0], "d_x", 1);
    if (dx > 0) {
      set.discrete = false;
      set.dx = dx;
      first = 1;
    }
  }
  for (std::size_t r = first; r < lines.size(); ++r) {
    const auto tokens = split_whitespace(lines[r]);
    if (tokens.empty()) throw FormatError(r + 1, "empty sequence");
    if (set.discrete) {
      sequential::Sequence s(static_cast<Eigen::Index>(tokens.size()), 1);
      for (std::size_t t = 0; t < tokens.size(); ++t) {
        const int v = parse_int(tokens[t], r + 1);
        if (v < 0) throw FormatError(r + 1, "negative symbol " + std::to_string(v));
        s(static_cast<Eigen::Index>(t), 0) = v;
      }
      set.seqs.push_back(std::move(s));
    } else {
      if (tokens.size() % static_cast<std::size_t>(set.dx) != 0)
        throw FormatError(r + 1, std::to_string(tokens.size()) + " values is not a multiple of d_x=" +
                                     std::to_string(set.dx));
      sequential::Sequence s(static_cast<Eigen::Index>(tokens.size()) / set.dx, set.dx);
      for (std::size_t t = 0; t < tokens.size(); ++t) s.data()[t] = parse_double(tokens[t], r + 1);
      set.seqs.push_back(std::move(s));
    }
  }
  return set;
}

std::string format_sequences(const SequenceSet &set) {
  std::string out;
  if (!set.discrete) out += "d_x=" + std::to_string(set.dx) + "\n";
  for (const auto &s : set.seqs) {
    if (s.rows() == 0) throw InvalidArgument("sequences: empty sequence");
    if (s.cols() != (set.discrete ? 1 : set.dx)) throw InvalidArgument("sequences: width does not match d_x");
    for (Eigen::Index i = 0; i < s.size(); ++i) {
      if (i) out += ' ';
      const double v = s.data()[i];
      if (set.discrete) {
        if (!(v >= 0.0 && v < 2147483647.0) || v != std::floor(v))
          throw InvalidArgument("sequences: discrete symbol " + format_number(v) + " is not a non-negative integer");
        out += std::to_string(static_cast<int>(v));
      } else {
        out += format_number(v);
      }
    }
    out += '\n';
  }
  return out;
}

SequenceSet read_sequences(const std::filesystem::path &path) { return parse_sequences(read_text(path)); }
void write_sequences(const std::filesystem::path &path, const SequenceSet &set) {
  write_text(path, format_sequences(set));
}

// ---------------------------------------------------------------- corpus

lda::Corpus parse_corpus(std::string_view text) {
  const auto lines = split_lines(text);
  lda::Corpus corpus;
  std::size_t first = 0;
  int declared = -1;
  if (!lines.empty()) {
    declared = header_value(lines[0], "vocab", 1);
    if (declared > 0) first = 1;
  }
  int max_word = -1;
  for (std::size_t r = first; r < lines.size(); ++r) {
    const auto tokens = split_whitespace(lines[r]);
    if (tokens.empty()) throw FormatError(r + 1, "empty document");
    std::vector<int> doc;
    for (const auto tok : tokens) {
      const int w = parse_int(tok, r + 1);
      if (w < 0 || (declared > 0 && w >= declared))
        throw FormatError(r + 1, "word index " + std::to_string(w) + " out of range");
      max_word = std::max(max_word, w);
      doc.push_back(w);
    }
    corpus.docs.push_back(std::move(doc));
  }
  corpus.vocab_size = declared > 0 ? declared : max_word + 1;
  return corpus;
}

std::string format_corpus(const lda::Corpus &corpus) {
  corpus.validate();
  std::string out = "vocab=" + std::to_string(corpus.vocab_size) + "\n";
  for (const auto &doc : corpus.docs) {
    for (std::size_t i = 0; i < doc.size(); ++i) out += (i ? " " : "") + std::to_string(doc[i]);
    out += '\n';
  }
  return out;
}

lda::Corpus read_corpus(const std::filesystem::path &path) { return parse_corpus(read_text(path)); }
void write_corpus(const std::filesystem::path &path, const lda::Corpus &corpus) {
  write_text(path, format_corpus(corpus));
}

std::string read_text(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path &path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidArgument("cannot open '" + path.string() + "' for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw InvalidArgument("write to '" + path.string() + "' failed");
}

// ---------------------------------------------------------------- models

Mat LdaModel::log_topics() const {
  validate();
  if (form == Topics::concentration) return lda::expected_log_topics(topics);
  return topics.array().log().matrix();
}

void LdaModel::validate() const {
  hyper.validate();
  if (topics.rows() != hyper.topics() || topics.cols() != hyper.vocab())
    throw InvalidArgument("LdaModel: topics must be K x V");
  if (!topics.allFinite() || topics.minCoeff() < 0.0) throw InvalidArgument("LdaModel: topics must be non-negative");
  if (form == Topics::concentration && !(topics.minCoeff() > 0.0))
    throw InvalidArgument("LdaModel: concentrations must be positive");
  if (form == Topics::probability)
    for (Eigen::Index k = 0; k < topics.rows(); ++k)
      if (std::abs(topics.row(k).sum() - 1.0) > 1e-9) throw InvalidArgument("LdaModel: topic rows must sum to one");
}

void MarkovChain::validate() const {
  const auto v = init.size();
  if (v < 1) throw InvalidArgument("MarkovChain: empty alphabet");
  if (trans.rows() != v || trans.cols() != v) throw InvalidArgument("MarkovChain: transition must be V x V");
  for (Eigen::Index i = 0; i < v; ++i) (void)Simplex(trans.row(i).transpose());
}

Vec MarkovChain::log_likelihood(const IntMat &x) const {
  validate();
  Vec out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double ll = 0.0;
    for (Eigen::Index d = 0; d < x.cols(); ++d) {
      const int s = x(i, d);
      if (s < 0 || s >= alphabet()) throw InvalidArgument("MarkovChain: symbol out of range");
      ll += std::log(d == 0 ? init[s] : trans(x(i, d - 1), s));
    }
    out[i] = ll;
  }
  return out;
}

std::string family_name(const Model &model) {
  return std::visit(
      [](const auto &m) -> std::string {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, ppca::PpcaParams>) return "ppca";
        else if constexpr (std::is_same_v<T, mixture::GmmParams>) return "gmm";
        else if constexpr (std::is_same_v<T, mixture::LcaParams>) return "lca";
        else if constexpr (std::is_same_v<T, irt::IrtParams>) return "irt";
        else if constexpr (std::is_same_v<T, LdaModel>) return "lda";
        else if constexpr (std::is_same_v<T, sequential::HmmParams>)
          return m.kind == sequential::EmissionKind::discrete ? "hmm" : "ghmm";
        else if constexpr (std::is_same_v<T, sequential::LdsParams>) return "lds";
        else if constexpr (std::is_same_v<T, MarkovChain>) return "markov";
        else if constexpr (std::is_same_v<T, vae::VaeModel>) return "vae";
        else if constexpr (std::is_same_v<T, flow::FlowModel>) return "flow";
        else if constexpr (std::is_same_v<T, diffusion::DiffusionModel>) return "diffusion";
        else if constexpr (std::is_same_v<T, arm::ArModel>) return "arm";
        else return "gan";
      },
      model);
}

Model canonicalize(const Model &model) {
  return std::visit(
      [](const auto &m) -> Model {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, ppca::PpcaParams>) return ppca::canonicalize(m);
        else if constexpr (std::is_same_v<T, mixture::GmmParams> || std::is_same_v<T, mixture::LcaParams>)
          return mixture::canonicalize(m);
        else if constexpr (std::is_same_v<T, sequential::HmmParams>) return sequential::canonicalize(m);
        else return m;
      },
      model);
}

Json model_to_json(const ModelFile &file) {
  validate_model(file.model);
  return {{"schema", kModelSchema},
          {"version", kModelVersion},
          {"family", family_name(file.model)},
          {"rng", {{"algorithm", RandomSource::kAlgorithm}, {"seed", file.seed}}},
          {"config", file.config},
          {"params", params_json(file.model)}};
}

ModelFile model_from_json(const Json &j) {
  Fields f(j, "");
  if (f.text("schema") != kModelSchema) f.fail("schema", "must be '" + std::string(kModelSchema) + "'");
  const long long version = f.integer("version");
  if (version < 1 || version > kModelVersion) f.fail("version", "is not supported");
  const std::string family = f.text("family");
  ModelFile file;
  {
    Fields rng(f.at("rng"), "rng");
    if (rng.text("algorithm") != RandomSource::kAlgorithm)
      rng.fail("algorithm", "must be '" + std::string(RandomSource::kAlgorithm) + "'");
    const Json &seed = rng.at("seed");
    if (!seed.is_number_unsigned() && !(seed.is_number_integer() && seed.get<long long>() >= 0))
      rng.fail("seed", "must be a non-negative integer");
    file.seed = seed.get<std::uint64_t>();
    rng.done();
  }
  file.config = f.at("config");
  if (!file.config.is_object()) f.fail("config", "must be an object");
  file.model = params_from(family, f.at("params"), "params");
  f.done();
  try {
    validate_model(file.model);
  } catch (const InvalidArgument &e) {
    throw InvalidArgument(std::string("field 'params' is invalid: ") + e.what());
  }
  return file;
}

void write_model(const std::filesystem::path &path, const ModelFile &file) {
  write_text(path, model_to_json(file).dump(2) + "\n");
}

ModelFile read_model(const std::filesystem::path &path) {
  Json j;
  try {
    j = Json::parse(read_text(path));
  } catch (const Json::parse_error &e) {
    throw FormatError(0, "'" + path.string() + "' is not valid JSON: " + e.what());
  }
  return model_from_json(j);
}

// ---------------------------------------------------------------- synthetic

SyntheticSpec spec_from_json(const Json &j) {
  Fields f(j, "");
  SyntheticSpec spec;
  spec.family = f.text("family");
  static const std::vector<std::string> families{"ppca", "gmm",  "lca",       "irt",     "lda",       "hmm",
                                                 "ghmm", "lds", "mixture1d", "blobs2d", "markov-seq"};
  if (std::find(families.begin(), families.end(), spec.family) == families.end())
    f.fail("family", "names an unknown family '" + spec.family + "'");
  if (f.has("seed")) {
    const Json &seed = f.at("seed");
    if (!seed.is_number_integer() || (!seed.is_number_unsigned() && seed.get<long long>() < 0))
      f.fail("seed", "must be a non-negative integer");
    spec.seed = seed.get<std::uint64_t>();
  }
  const bool sequences = spec.family == "hmm" || spec.family == "ghmm" || spec.family == "lds" ||
                         spec.family == "markov-seq";
  if (spec.family == "lda") {
    if (f.has("doc_lengths")) {
      spec.doc_lengths = f.ints("doc_lengths");
      for (int len : spec.doc_lengths)
        if (len < 1) f.fail("doc_lengths", "entries must be positive");
      if (spec.doc_lengths.empty()) f.fail("doc_lengths", "must not be empty");
      if (f.has("n") && f.integer("n") != static_cast<long long>(spec.doc_lengths.size()))
        f.fail("n", "must equal the number of doc_lengths");
    } else {
      const int n = positive_int(f, "n");
      spec.doc_lengths.assign(static_cast<std::size_t>(n), positive_int(f, "doc_length"));
    }
    spec.n = static_cast<Eigen::Index>(spec.doc_lengths.size());
  } else {
    spec.n = positive_int(f, "n");
  }
  if (sequences) spec.length = positive_int(f, "length");

  const Json &params = f.at("params");
  if (spec.family == "mixture1d") {
    Fields p(params, "params");
    const Simplex w = simplex_field(p, "weights");
    const Vec means = p.vec("means"), sds = p.vec("sds");
    if (means.size() != w.size()) p.fail("means", "must have one entry per weight");
    if (sds.size() != w.size()) p.fail("sds", "must have one entry per weight");
    if (!(sds.minCoeff() > 0.0)) p.fail("sds", "entries must be positive");
    mixture::GmmParams g{w, {}, {}};
    for (Eigen::Index k = 0; k < w.size(); ++k) {
      g.means.push_back(Vec::Constant(1, means[k]));
      g.covs.push_back(Mat::Constant(1, 1, sds[k] * sds[k]));
    }
    p.done();
    spec.truth = std::move(g);
  } else if (spec.family == "blobs2d") {
    Fields p(params, "params");
    const Mat centers = p.mat("centers");
    if (centers.rows() < 1 || centers.cols() != 2) p.fail("centers", "must be a K x 2 matrix");
    const double sd = p.number("sd");
    if (!(sd > 0.0)) p.fail("sd", "must be positive");
    const Simplex w = p.has("weights") ? simplex_field(p, "weights") : Simplex::uniform(centers.rows());
    if (w.size() != centers.rows()) p.fail("weights", "must have one entry per center");
    mixture::GmmParams g{w, {}, {}};
    for (Eigen::Index k = 0; k < centers.rows(); ++k) {
      g.means.push_back(centers.row(k).transpose());
      g.covs.push_back(sd * sd * Mat::Identity(2, 2));
    }
    p.done();
    spec.truth = std::move(g);
  } else {
    const std::string family = spec.family == "markov-seq" ? "markov" : spec.family;
    spec.truth = params_from(family, params, "params");
  }
  f.done();
  try {
    if (auto *m = std::get_if<LdaModel>(&spec.truth)) {
      m->hyper.validate();
      if (m->topics.size() != 0) throw InvalidArgument("topics are drawn from beta and must not be given");
    } else {
      validate_model(spec.truth);
    }
    if (auto *g = std::get_if<mixture::GmmParams>(&spec.truth))
      for (const auto &c : g->covs) (void)cholesky_with_jitter(c);
  } catch (const std::exception &e) {
    throw InvalidArgument(std::string("field 'params' is invalid: ") + e.what());
  }
  return spec;
}

SyntheticSpec read_spec(const std::filesystem::path &path) {
  Json j;
  try {
    j = Json::parse(read_text(path));
  } catch (const Json::parse_error &e) {
    throw FormatError(0, "'" + path.string() + "' is not valid JSON: " + e.what());
  }
  return spec_from_json(j);
}

Synthetic generate(const SyntheticSpec &spec) {
  RandomSource rng(spec.seed);
  Synthetic out;
  out.family = spec.family;
  out.truth = spec.truth;
  const Eigen::Index n = spec.n;
  if (n < 1) throw InvalidArgument("synth: field 'n' must be positive");
  const auto &f = spec.family;
  if (f == "ppca") {
    const auto &p = std::get<ppca::PpcaParams>(spec.truth);
    p.validate();
    out.latents = normal_mat(n, p.latent_dim(), rng);
    out.data = (out.latents * p.W.transpose()).rowwise() + p.mu.transpose();
    out.data += std::sqrt(p.sigma2) * normal_mat(n, p.data_dim(), rng);
  } else if (f == "gmm" || f == "mixture1d" || f == "blobs2d") {
    const auto &p = std::get<mixture::GmmParams>(spec.truth);
    p.validate();
    std::vector<Mat> chol;
    for (const auto &c : p.covs) chol.push_back(cholesky_with_jitter(c));
    out.data.resize(n, p.dim());
    out.latents.resize(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(sample_categorical(p.weights, rng));
      out.latents(i, 0) = static_cast<double>(k);
      out.data.row(i) = (p.means[k] + chol[k] * rng.normal_vec(p.dim())).transpose();
    }
  } else if (f == "lca") {
    const auto &p = std::get<mixture::LcaParams>(spec.truth);
    p.validate();
    out.codes.resize(n, p.items());
    out.latents.resize(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(sample_categorical(p.weights, rng));
      out.latents(i, 0) = static_cast<double>(k);
      for (Eigen::Index j = 0; j < p.items(); ++j)
        out.codes(i, j) = static_cast<int>(sample_categorical(p.item_probs[k][static_cast<std::size_t>(j)], rng));
    }
  } else if (f == "irt") {
    const auto &p = std::get<irt::IrtParams>(spec.truth);
    p.validate();
    out.codes.resize(n, p.items());
    out.latents.resize(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double theta = rng.normal();
      out.latents(i, 0) = theta;
      for (Eigen::Index j = 0; j < p.items(); ++j) out.codes(i, j) = rng.uniform() < irt::item_prob(theta, p.a[j], p.b[j]);
    }
  } else if (f == "lda") {
    const auto &m = std::get<LdaModel>(spec.truth);
    auto [corpus, latents] = lda::generate_corpus(m.hyper, spec.doc_lengths, rng);
    out.truth = LdaModel{m.hyper, latents.topic_word, LdaModel::Topics::probability};
    out.corpus = std::move(corpus);
    out.latents = latents.doc_topic;
    out.topics = std::move(latents);
  } else if (f == "hmm" || f == "ghmm") {
    const auto &p = std::get<sequential::HmmParams>(spec.truth);
    const bool discrete = p.kind == sequential::EmissionKind::discrete;
    if (discrete != (f == "hmm")) throw InvalidArgument("synth: field 'family' does not match the emission kind");
    out.sequences.discrete = discrete;
    out.sequences.dx = discrete ? 1 : static_cast<int>(p.obs_dim());
    for (Eigen::Index s = 0; s < n; ++s) {
      auto [obs, states] = sequential::hmm_sample(p, spec.length, rng);
      out.sequences.seqs.push_back(std::move(obs));
      out.latent_paths.push_back(states.cast<double>());
    }
  } else if (f == "lds") {
    const auto &p = std::get<sequential::LdsParams>(spec.truth);
    out.sequences.discrete = false;
    out.sequences.dx = static_cast<int>(p.dx());
    for (Eigen::Index s = 0; s < n; ++s) {
      auto [obs, z] = sequential::lds_sample(p, spec.length, rng);
      out.sequences.seqs.push_back(std::move(obs));
      out.latent_paths.push_back(std::move(z));
    }
  } else if (f == "markov-seq") {
    const auto &c = std::get<MarkovChain>(spec.truth);
    c.validate();
    out.codes.resize(n, spec.length);
    for (Eigen::Index i = 0; i < n; ++i) {
      out.codes(i, 0) = draw(c.init.probs().transpose(), rng);
      for (Eigen::Index d = 1; d < spec.length; ++d) out.codes(i, d) = draw(c.trans.row(out.codes(i, d - 1)), rng);
    }
  } else {
    throw InvalidArgument("synth: field 'family' names an unknown family '" + f + "'");
  }
  return out;
}

}  // namespace latentlab::datasets
