#include "latentlab/lda.hpp"

#include <boost/math/special_functions/digamma.hpp>

#include <cmath>

namespace latentlab::lda {

namespace {

double digamma(double x) { return boost::math::digamma(x); }

// E[log p] for p ~ Dir(concentration), one row per distribution.
Mat expected_log(const Mat &concentration) {
  Mat out(concentration.rows(), concentration.cols());
  for (Eigen::Index r = 0; r < concentration.rows(); ++r) {
    const double total = digamma(concentration.row(r).sum());
    for (Eigen::Index c = 0; c < concentration.cols(); ++c) out(r, c) = digamma(concentration(r, c)) - total;
  }
  return out;
}

double log_beta_fn(const Eigen::Ref<const Vec> &a) {
  double s = -std::lgamma(a.sum());
  for (Eigen::Index i = 0; i < a.size(); ++i) s += std::lgamma(a[i]);
  return s;
}

// E_q[log Dir(p | prior)] - E_q[log Dir(p | post)] for one factor.
double dirichlet_terms(const Vec &prior, const Vec &post, const Vec &elog) {
  return -log_beta_fn(prior) + (prior.array() - 1.0).matrix().dot(elog) + log_beta_fn(post) -
         (post.array() - 1.0).matrix().dot(elog);
}

void check_shapes(const LdaHyper &hyper, const Corpus &corpus, const LdaVariational &var) {
  const auto d = static_cast<Eigen::Index>(corpus.docs.size());
  if (var.doc_topic.rows() != d || var.doc_topic.cols() != hyper.topics() ||
      var.topic_word.rows() != hyper.topics() || var.topic_word.cols() != hyper.vocab() ||
      static_cast<Eigen::Index>(var.word_topic.size()) != d)
    throw InvalidArgument("lda: variational shapes do not match the corpus");
  for (std::size_t i = 0; i < corpus.docs.size(); ++i)
    if (var.word_topic[i].rows() != static_cast<Eigen::Index>(corpus.docs[i].size()) ||
        var.word_topic[i].cols() != hyper.topics())
      throw InvalidArgument("lda: word_topic shape mismatch in document " + std::to_string(i));
}

struct LdaEm {
  using Params = LdaVariational;
  using Posterior = LdaVariational;
  const LdaHyper &hyper;
  const Corpus &corpus;

  Posterior e_step(const Params &p) const {
    Params next = p;
    update_word_topic(hyper, corpus, next);
    return next;
  }
  Params m_step(const Posterior &q, const Params &, EmEvents &) const {
    Params next = q;
    update_doc_topic(hyper, corpus, next);
    update_topic_word(hyper, corpus, next);
    return next;
  }
  double objective(const Params &p) const { return elbo(hyper, corpus, p); }
};

}  // namespace

LdaHyper LdaHyper::symmetric(Eigen::Index k, Eigen::Index v, double alpha, double beta) {
  return {Vec::Constant(k, alpha), Vec::Constant(v, beta)};
}

void LdaHyper::validate() const {
  if (alpha.size() == 0 || beta.size() == 0) throw InvalidArgument("lda: empty hyperparameters");
  if (!(alpha.minCoeff() > 0.0) || !(beta.minCoeff() > 0.0))
    throw InvalidArgument("lda: hyperparameters must be positive");
}

std::size_t Corpus::tokens() const {
  std::size_t n = 0;
  for (const auto &d : docs) n += d.size();
  return n;
}

void Corpus::validate() const {
  if (vocab_size < 1) throw InvalidArgument("corpus: vocabulary size must be positive");
  for (std::size_t d = 0; d < docs.size(); ++d) {
    if (docs[d].empty()) throw InvalidArgument("corpus: document " + std::to_string(d) + " is empty");
    for (int w : docs[d])
      if (w < 0 || w >= vocab_size)
        throw InvalidArgument("corpus: word index " + std::to_string(w) + " out of range in document " +
                              std::to_string(d));
  }
}

std::pair<Corpus, CorpusLatents> generate_corpus(const LdaHyper &hyper,
                                                 const std::vector<int> &doc_lengths,
                                                 RandomSource &rng) {
  hyper.validate();
  const auto k = hyper.topics();
  const auto v = hyper.vocab();
  CorpusLatents latents{Mat(k, v), Mat(static_cast<Eigen::Index>(doc_lengths.size()), k), {}};
  std::vector<Simplex> phi;
  for (Eigen::Index t = 0; t < k; ++t) {
    phi.push_back(sample_dirichlet(hyper.beta, rng));
    latents.topic_word.row(t) = phi.back().probs().transpose();
  }
  Corpus corpus{{}, static_cast<int>(v)};
  for (std::size_t d = 0; d < doc_lengths.size(); ++d) {
    const Simplex theta = sample_dirichlet(hyper.alpha, rng);
    latents.doc_topic.row(static_cast<Eigen::Index>(d)) = theta.probs().transpose();
    std::vector<int> words, topics;
    for (int n = 0; n < doc_lengths[d]; ++n) {
      const auto z = sample_categorical(theta, rng);
      topics.push_back(static_cast<int>(z));
      words.push_back(static_cast<int>(sample_categorical(phi[static_cast<std::size_t>(z)], rng)));
    }
    corpus.docs.push_back(std::move(words));
    latents.z.push_back(std::move(topics));
  }
  return {std::move(corpus), std::move(latents)};
}

double elbo(const LdaHyper &hyper, const Corpus &corpus, const LdaVariational &var) {
  check_shapes(hyper, corpus, var);
  const Mat elog_theta = expected_log(var.doc_topic);
  const Mat elog_phi = expected_log(var.topic_word);
  double total = 0.0;
  for (Eigen::Index d = 0; d < var.doc_topic.rows(); ++d)
    total += dirichlet_terms(hyper.alpha, var.doc_topic.row(d).transpose(), elog_theta.row(d).transpose());
  for (Eigen::Index k = 0; k < var.topic_word.rows(); ++k)
    total += dirichlet_terms(hyper.beta, var.topic_word.row(k).transpose(), elog_phi.row(k).transpose());
  for (std::size_t d = 0; d < corpus.docs.size(); ++d) {
    const Mat &r = var.word_topic[d];
    const auto dd = static_cast<Eigen::Index>(d);
    for (Eigen::Index n = 0; n < r.rows(); ++n) {
      const int w = corpus.docs[d][static_cast<std::size_t>(n)];
      for (Eigen::Index k = 0; k < r.cols(); ++k) {
        const double q = r(n, k);
        if (q <= 0.0) continue;
        total += q * (elog_theta(dd, k) + elog_phi(k, w) - std::log(q));
      }
    }
  }
  return total;
}

void update_word_topic(const LdaHyper &hyper, const Corpus &corpus, LdaVariational &var) {
  check_shapes(hyper, corpus, var);
  const Mat elog_theta = expected_log(var.doc_topic);
  const Mat elog_phi = expected_log(var.topic_word);
  parallel_for(corpus.docs.size(), [&](std::size_t d) {
    const auto dd = static_cast<Eigen::Index>(d);
    Mat &r = var.word_topic[d];
    for (Eigen::Index n = 0; n < r.rows(); ++n) {
      const int w = corpus.docs[d][static_cast<std::size_t>(n)];
      const Vec logits = elog_theta.row(dd).transpose() + elog_phi.col(w);
      r.row(n) = Simplex::from_log(logits).probs().transpose();
    }
  });
}

void update_doc_topic(const LdaHyper &hyper, const Corpus &corpus, LdaVariational &var) {
  check_shapes(hyper, corpus, var);
  for (std::size_t d = 0; d < corpus.docs.size(); ++d)
    var.doc_topic.row(static_cast<Eigen::Index>(d)) =
        hyper.alpha.transpose() + var.word_topic[d].colwise().sum();
}

void update_topic_word(const LdaHyper &hyper, const Corpus &corpus, LdaVariational &var) {
  check_shapes(hyper, corpus, var);
  var.topic_word.rowwise() = hyper.beta.transpose();
  for (std::size_t d = 0; d < corpus.docs.size(); ++d) {
    const Mat &r = var.word_topic[d];
    for (Eigen::Index n = 0; n < r.rows(); ++n)
      var.topic_word.col(corpus.docs[d][static_cast<std::size_t>(n)]) += r.row(n).transpose();
  }
}

LdaVariational init_variational(const LdaHyper &hyper, const Corpus &corpus, RandomSource &rng) {
  hyper.validate();
  corpus.validate();
  if (corpus.vocab_size != hyper.vocab()) throw InvalidArgument("lda: vocabulary size mismatch");
  const auto k = hyper.topics();
  LdaVariational var{Mat(static_cast<Eigen::Index>(corpus.docs.size()), k), Mat(k, hyper.vocab()), {}};
  for (const auto &doc : corpus.docs) {
    Mat r(static_cast<Eigen::Index>(doc.size()), k);
    for (Eigen::Index n = 0; n < r.rows(); ++n) r.row(n) = sample_dirichlet(Vec::Ones(k), rng).probs().transpose();
    var.word_topic.push_back(std::move(r));
  }
  update_doc_topic(hyper, corpus, var);
  update_topic_word(hyper, corpus, var);
  return var;
}

EmConfig default_config() {
  EmConfig cfg;
  cfg.rel_tol = 1e-6;
  cfg.monotone_slack = 1e-6;
  return cfg;
}

std::pair<LdaVariational, FitReport> fit_lda(const LdaHyper &hyper, const Corpus &corpus,
                                             const EmConfig &cfg) {
  RandomSource rng(cfg.seed);
  LdaVariational start = init_variational(hyper, corpus, rng);
  EmConfig local = cfg;
  local.monotone_slack = std::max(cfg.monotone_slack, 1e-6);
  LdaEm model{hyper, corpus};
  return run_em(model, std::move(start), local);
}

Mat topic_word_mean(const LdaVariational &var) {
  Mat out = var.topic_word;
  for (Eigen::Index k = 0; k < out.rows(); ++k) out.row(k) /= out.row(k).sum();
  return out;
}

Mat expected_log_topics(const Mat &topic_word_concentration) {
  if (!(topic_word_concentration.size() > 0 && topic_word_concentration.minCoeff() > 0.0))
    throw InvalidArgument("lda: topic concentrations must be positive");
  return expected_log(topic_word_concentration);
}

std::vector<DocumentPosterior> infer_documents(const Vec &alpha, const Mat &log_topics, const Corpus &corpus,
                                               int max_iters, double tol) {
  corpus.validate();
  const auto k = alpha.size();
  if (k == 0 || !(alpha.minCoeff() > 0.0)) throw InvalidArgument("lda: alpha must be positive");
  if (log_topics.rows() != k || log_topics.cols() != corpus.vocab_size)
    throw InvalidArgument("lda: topic matrix must be K x V");
  if (max_iters < 1) throw InvalidArgument("lda: max_iters must be >= 1");
  std::vector<DocumentPosterior> out(corpus.docs.size());
  parallel_for(corpus.docs.size(), [&](std::size_t d) {
    const auto &doc = corpus.docs[d];
    const auto n = static_cast<Eigen::Index>(doc.size());
    Vec gamma = alpha.array() + static_cast<double>(n) / static_cast<double>(k);
    Mat r(n, k);
    // Coordinate ascent on (r, gamma); each sweep cannot lower the bound.
    for (int it = 0; it < max_iters; ++it) {
      const Vec elog = expected_log(gamma.transpose()).row(0).transpose();
      for (Eigen::Index i = 0; i < n; ++i)
        r.row(i) = Simplex::from_log(elog + log_topics.col(doc[static_cast<std::size_t>(i)])).probs().transpose();
      const Vec next = alpha + r.colwise().sum().transpose();
      const double change = (next - gamma).cwiseAbs().maxCoeff();
      gamma = next;
      if (change < tol) break;
    }
    const Vec elog = expected_log(gamma.transpose()).row(0).transpose();
    double bound = dirichlet_terms(alpha, gamma, elog);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index t = 0; t < k; ++t) {
        const double q = r(i, t);
        if (q > 0.0) bound += q * (elog[t] + log_topics(t, doc[static_cast<std::size_t>(i)]) - std::log(q));
      }
    out[d] = {std::move(gamma), bound};
  });
  return out;
}

}  // namespace latentlab::lda
