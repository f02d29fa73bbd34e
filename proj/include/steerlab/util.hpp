#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace steerlab {

using json = nlohmann::json;

// Error families map 1:1 to CLI exit codes (see tools/steerlab_main.cpp).
enum class ErrorFamily {
  Usage,
  Corpus,
  Prompting,
  Gateway,
  Distill,
  Training,
  Eval,
  Pipeline,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorFamily family, const std::string& msg)
      : std::runtime_error(msg), family_(family) {}
  ErrorFamily family() const { return family_; }

 private:
  ErrorFamily family_;
};

struct UsageError : Error {
  explicit UsageError(const std::string& m) : Error(ErrorFamily::Usage, m) {}
};
struct CorpusError : Error {
  explicit CorpusError(const std::string& m) : Error(ErrorFamily::Corpus, m) {}
};
struct PromptError : Error {
  explicit PromptError(const std::string& m) : Error(ErrorFamily::Prompting, m) {}
};
struct GatewayError : Error {
  explicit GatewayError(const std::string& m) : Error(ErrorFamily::Gateway, m) {}
};
// Transport failures carry the last HTTP status seen (0 = connection-level).
struct TransportError : GatewayError {
  TransportError(const std::string& m, int status)
      : GatewayError(m), last_status(status) {}
  int last_status;
};
struct ProtocolError : GatewayError {
  explicit ProtocolError(const std::string& m) : GatewayError(m) {}
};
struct DistillError : Error {
  explicit DistillError(const std::string& m) : Error(ErrorFamily::Distill, m) {}
};
struct TrainError : Error {
  explicit TrainError(const std::string& m) : Error(ErrorFamily::Training, m) {}
};
struct EvalError : Error {
  explicit EvalError(const std::string& m) : Error(ErrorFamily::Eval, m) {}
};
struct PipelineError : Error {
  explicit PipelineError(const std::string& m) : Error(ErrorFamily::Pipeline, m) {}
};

// Deterministic RNG. mt19937_64 output is standardized; the distribution
// transforms live here because the std::*_distribution algorithms are
// implementation-defined and would break cross-toolchain reproducibility.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t bits() { return gen_(); }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n). n must be > 0.
  uint64_t index(uint64_t n);

  // Standard normal via Box-Muller on owned uniforms.
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(index(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Seeded FNV-1a over bytes; used for feature hashing and per-instance
// rng stream derivation.
uint64_t hash64(std::string_view bytes, uint64_t seed = 0);
uint64_t mix64(uint64_t a, uint64_t b);

// SHA-256 hex digest (prompt hashes, input file digests).
std::string sha256_hex(std::string_view bytes);
std::string sha256_file_hex(const std::string& path);

// ---- string helpers ----
std::string lower_ascii(std::string_view s);
std::string trim(std::string_view s);
bool contains(std::string_view haystack, std::string_view needle);
// Maximal runs of alphanumeric characters, case-folded.
std::vector<std::string> word_tokens(std::string_view text);
// Whitespace-separated tokens (used for CoT length statistics).
int whitespace_token_count(std::string_view text);
std::string format_double(double v);  // shortest round-trip decimal

// ---- file helpers ----
std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);

struct JsonLine {
  int line_no = 0;
  json obj;
};
// Parses one JSON object per line; blank lines skipped. Errors carry the
// 1-based line number. `what` names the error family of the caller.
std::vector<JsonLine> read_jsonl(const std::string& path, ErrorFamily what);
void write_jsonl(const std::string& path, const std::vector<json>& rows);

// Runs fn(i) for i in [0, n) on up to `threads` workers. Results must be
// written to pre-sized slots by index so the reduction order stays
// deterministic. threads <= 1 runs inline.
void parallel_for(size_t n, int threads, const std::function<void(size_t)>& fn);

}  // namespace steerlab
