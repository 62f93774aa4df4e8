// Dataset file formats, versioned model files and synthetic generators with
// known ground truth.
//
// Text formats:
//   CSV       header row of column names, then one numeric row per point.
//   sequences one sequence per line. Discrete files hold integer symbols;
//             continuous files start with a "d_x=<n>" line and hold each
//             sequence as its flattened T x d_x observations.
//   corpus    one document per line of whitespace-separated word indices,
//             optionally preceded by a "vocab=<V>" line.
// Numbers are written with 17 significant digits so every double survives
// a write/read cycle bit for bit.

#pragma once

#include "latentlab/arm.hpp"
#include "latentlab/core.hpp"
#include "latentlab/diffusion.hpp"
#include "latentlab/flow.hpp"
#include "latentlab/gan.hpp"
#include "latentlab/irt.hpp"
#include "latentlab/lda.hpp"
#include "latentlab/mixture.hpp"
#include "latentlab/ppca.hpp"
#include "latentlab/sequential.hpp"
#include "latentlab/vae.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace latentlab::datasets {

using Json = nlohmann::ordered_json;

/// Malformed input text. line() is 1-based, 0 when no line applies.
class FormatError : public InvalidArgument {
public:
  FormatError(std::size_t line, const std::string &what);
  [[nodiscard]] std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

/// 17 significant digits, '.' decimal point.
[[nodiscard]] std::string format_number(double v);

struct Dataset {
  std::vector<std::string> columns;
  Mat values;  // rows x columns.size()

  /// Columns named prefix1..prefixD.
  [[nodiscard]] static Dataset from(Mat values, const std::string &prefix = "x");
  [[nodiscard]] static Dataset from(const IntMat &codes, const std::string &prefix = "x");
  /// Values as integers; throws if any entry is not integral.
  [[nodiscard]] IntMat codes() const;
};

[[nodiscard]] Dataset parse_csv(std::string_view text);
[[nodiscard]] std::string format_csv(const Dataset &data);
[[nodiscard]] Dataset read_csv(const std::filesystem::path &path);
void write_csv(const std::filesystem::path &path, const Dataset &data);

struct SequenceSet {
  bool discrete = true;
  int dx = 1;  // observation width; 1 for discrete
  std::vector<sequential::Sequence> seqs;  // each T x dx
};

[[nodiscard]] SequenceSet parse_sequences(std::string_view text);
[[nodiscard]] std::string format_sequences(const SequenceSet &set);
[[nodiscard]] SequenceSet read_sequences(const std::filesystem::path &path);
void write_sequences(const std::filesystem::path &path, const SequenceSet &set);

/// Without a vocab line the vocabulary is max index + 1.
[[nodiscard]] lda::Corpus parse_corpus(std::string_view text);
[[nodiscard]] std::string format_corpus(const lda::Corpus &corpus);
[[nodiscard]] lda::Corpus read_corpus(const std::filesystem::path &path);
void write_corpus(const std::filesystem::path &path, const lda::Corpus &corpus);

[[nodiscard]] std::string read_text(const std::filesystem::path &path);
void write_text(const std::filesystem::path &path, std::string_view text);

/// LDA model: Dirichlet hyperparameters plus K x V topics, either the
/// variational Dirichlet parameters of a fit or point topic-word
/// probabilities (ground truth).
struct LdaModel {
  enum class Topics { concentration, probability };
  lda::LdaHyper hyper;
  Mat topics;
  Topics form = Topics::concentration;

  /// E[log phi] under the stored form.
  [[nodiscard]] Mat log_topics() const;
  void validate() const;
};

/// First-order chain over V symbols, the ground truth of markov-seq data.
struct MarkovChain {
  Simplex init;
  Mat trans;  // rows are simplexes

  [[nodiscard]] int alphabet() const { return static_cast<int>(init.size()); }
  void validate() const;
  [[nodiscard]] Vec log_likelihood(const IntMat &x) const;
};

using Model = std::variant<ppca::PpcaParams, mixture::GmmParams, mixture::LcaParams, irt::IrtParams, LdaModel,
                           sequential::HmmParams, sequential::LdsParams, MarkovChain, vae::VaeModel,
                           flow::FlowModel, diffusion::DiffusionModel, arm::ArModel, gan::GanModel>;

/// "ppca", "gmm", "lca", "irt", "lda", "hmm", "ghmm", "lds", "markov", "vae",
/// "flow", "diffusion", "arm" or "gan".
[[nodiscard]] std::string family_name(const Model &model);

/// Parameters in canonical order (component, state and loading order fixed
/// up to the model's symmetries).
[[nodiscard]] Model canonicalize(const Model &model);

struct ModelFile {
  Model model;
  Json config = Json::object();  // creation config
  std::uint64_t seed = 0;
};

inline constexpr std::string_view kModelSchema = "latentlab.model";
inline constexpr int kModelVersion = 1;

[[nodiscard]] Json model_to_json(const ModelFile &file);
/// Rejects unknown schema, newer versions, unknown families and unknown keys.
[[nodiscard]] ModelFile model_from_json(const Json &j);
void write_model(const std::filesystem::path &path, const ModelFile &file);
[[nodiscard]] ModelFile read_model(const std::filesystem::path &path);

struct SyntheticSpec {
  std::string family;  // ppca gmm lca irt lda hmm ghmm lds mixture1d blobs2d markov-seq
  Model truth;         // LdaModel carries only the hyperparameters
  Eigen::Index n = 0;  // points, documents or sequences
  Eigen::Index length = 0;        // sequence length (hmm, ghmm, lds, markov-seq)
  std::vector<int> doc_lengths;   // lda
  std::uint64_t seed = 0;
};

/// JSON form: {"family", "seed", "n", "length" | "doc_length" | "doc_lengths",
/// "params"}. params uses the model-file layout of the matching family, with
/// shorthands for mixture1d {"weights", "means", "sds"} and blobs2d
/// {"centers", "sd", optional "weights"}. Errors name the offending field.
[[nodiscard]] SyntheticSpec spec_from_json(const Json &j);
[[nodiscard]] SyntheticSpec read_spec(const std::filesystem::path &path);

struct Synthetic {
  std::string family;
  Mat data;                        // ppca gmm mixture1d blobs2d
  IntMat codes;                    // lca irt markov-seq
  SequenceSet sequences;           // hmm ghmm lds
  lda::Corpus corpus;              // lda
  Mat latents;                     // per row: z (ppca), component or class (gmm lca mixture1d blobs2d), theta (irt)
  std::vector<Mat> latent_paths;   // per sequence: states as a T x 1 column (hmm ghmm) or z_t rows (lds)
  lda::CorpusLatents topics;       // lda
  Model truth;                     // lda truth holds the sampled topics as probabilities
};

/// Exact ancestral sampling; a pure function of the spec.
[[nodiscard]] Synthetic generate(const SyntheticSpec &spec);

}  // namespace latentlab::datasets
