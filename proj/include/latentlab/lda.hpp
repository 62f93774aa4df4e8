// Latent Dirichlet allocation with full mean-field variational inference.
//
// Generative process: phi_k ~ Dir(beta), theta_d ~ Dir(alpha),
// z_dn ~ Cat(theta_d), w_dn ~ Cat(phi_{z_dn}). The variational family is
// q(phi) prod_d q(theta_d) prod_n q(z_dn) with Dirichlet factors for phi and
// theta and categorical factors for z.

#pragma once

#include "latentlab/core.hpp"
#include "latentlab/em.hpp"

#include <string>
#include <utility>
#include <vector>

namespace latentlab::lda {

struct LdaHyper {
  Vec alpha;  // K
  Vec beta;   // V

  [[nodiscard]] Eigen::Index topics() const { return alpha.size(); }
  [[nodiscard]] Eigen::Index vocab() const { return beta.size(); }
  [[nodiscard]] static LdaHyper symmetric(Eigen::Index k, Eigen::Index v, double alpha, double beta);
  void validate() const;
};

struct Corpus {
  std::vector<std::vector<int>> docs;
  int vocab_size = 0;

  [[nodiscard]] std::size_t tokens() const;
  /// Throws on empty documents or out-of-range word indices.
  void validate() const;
};

/// Variational parameters. doc_topic(d, k) and topic_word(k, v) are
/// Dirichlet concentrations; word_topic[d] holds one simplex row per token.
struct LdaVariational {
  Mat doc_topic;
  Mat topic_word;
  std::vector<Mat> word_topic;
};

struct CorpusLatents {
  Mat topic_word;                  // K x V, rows are phi_k
  Mat doc_topic;                   // D x K, rows are theta_d
  std::vector<std::vector<int>> z;
};

/// Exact ancestral sampling from the generative process.
[[nodiscard]] std::pair<Corpus, CorpusLatents> generate_corpus(const LdaHyper &hyper,
                                                               const std::vector<int> &doc_lengths,
                                                               RandomSource &rng);

/// Analytic evidence lower bound for the current variational state.
[[nodiscard]] double elbo(const LdaHyper &hyper, const Corpus &corpus, const LdaVariational &var);

/// Coordinate updates; each one maximizes the ELBO in its own block.
void update_word_topic(const LdaHyper &hyper, const Corpus &corpus, LdaVariational &var);
void update_doc_topic(const LdaHyper &hyper, const Corpus &corpus, LdaVariational &var);
void update_topic_word(const LdaHyper &hyper, const Corpus &corpus, LdaVariational &var);

/// word_topic rows drawn from a symmetric Dirichlet(1); the Dirichlet
/// factors are then set to their optimal values given those rows.
[[nodiscard]] LdaVariational init_variational(const LdaHyper &hyper, const Corpus &corpus,
                                              RandomSource &rng);

/// Full-batch coordinate ascent: token sweep, then document and topic
/// factors. Objective is the ELBO; rel_tol defaults to 1e-6 and the
/// monotonicity slack to 1e-6.
[[nodiscard]] std::pair<LdaVariational, FitReport> fit_lda(const LdaHyper &hyper,
                                                           const Corpus &corpus,
                                                           const EmConfig &cfg);

/// Default EM settings for LDA (rel_tol 1e-6, slack 1e-6).
[[nodiscard]] EmConfig default_config();

/// Expected topic-word distributions, topic_word rows normalized.
[[nodiscard]] Mat topic_word_mean(const LdaVariational &var);

/// Per-document posterior with the topics held fixed, given as the K x V
/// matrix of E[log phi_kw] (digamma terms for a Dirichlet q(phi), plain logs
/// for point topics).
struct DocumentPosterior {
  Vec doc_topic;  // Dirichlet parameters of q(theta_d)
  double bound;   // E_q[log p(w_d, theta_d, z_d | phi)] - E_q[log q], a lower bound given the topics
};

[[nodiscard]] Mat expected_log_topics(const Mat &topic_word_concentration);
[[nodiscard]] std::vector<DocumentPosterior> infer_documents(const Vec &alpha, const Mat &log_topics,
                                                             const Corpus &corpus, int max_iters = 200,
                                                             double tol = 1e-10);

}  // namespace latentlab::lda
