#include "im2markup/attention.hpp"

#include <fstream>

#include "im2markup/error.hpp"
#include "json.hpp"

namespace im2markup {

std::vector<double> AttentionTrace::cumulative() const {
  if (steps.empty()) return {};
  std::vector<double> out(steps[0].size(), 0.0);
  for (const auto& row : steps) {
    for (size_t l = 0; l < row.size(); ++l) out[l] += row[l];
  }
  return out;
}

void AttentionTrace::save(const std::string& path) const {
  if (tokens.size() != steps.size()) {
    throw ContractError("attention trace: " + std::to_string(tokens.size()) +
                        " tokens for " + std::to_string(steps.size()) +
                        " steps");
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("attention trace: cannot write " + path);
  for (size_t t = 0; t < steps.size(); ++t) {
    nlohmann::json j;
    j["step"] = t + 1;
    j["token"] = tokens[t];
    j["alpha"] = steps[t];
    os << j.dump() << "\n";
  }
}

AttentionTrace AttentionTrace::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("attention trace: cannot open " + path);
  AttentionTrace trace;
  std::string line;
  size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw IoError("attention trace: " + path + ":" +
                    std::to_string(lineno) + ": " + e.what());
    }
    trace.tokens.push_back(j.at("token").get<std::string>());
    trace.steps.push_back(j.at("alpha").get<std::vector<double>>());
  }
  return trace;
}

template <class S>
TensorT<S> attend(const TensorT<S>& a_flat, const TensorT<S>& h_prev,
                  const AttentionParamsT<S>& params) {
  auto x = concat<S>({a_flat, h_prev}, 1);
  auto h1 = im2markup::tanh(add(matmul(x, params.w1), params.b1));
  auto h2 = im2markup::tanh(add(matmul(h1, params.w2), params.b2));
  return softmax(add(matmul(h2, params.w3), params.b3));
}

template <class S>
TensorT<S> context(const TensorT<S>& a, const TensorT<S>& alpha) {
  return vecmat(alpha, a);
}

double focal_threshold(int num_locations) {
  return 1.0 / (4.0 * num_locations);
}

#define IM2MARKUP_INSTANTIATE(S)                                 \
  template struct AttentionParamsT<S>;                           \
  template TensorT<S> attend<S>(const TensorT<S>&, const TensorT<S>&, \
                                const AttentionParamsT<S>&);     \
  template TensorT<S> context<S>(const TensorT<S>&, const TensorT<S>&);

IM2MARKUP_INSTANTIATE(float)
IM2MARKUP_INSTANTIATE(double)

#undef IM2MARKUP_INSTANTIATE

}  // namespace im2markup
