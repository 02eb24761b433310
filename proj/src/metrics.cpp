#include "sdistill/metrics.hpp"

#include <cmath>

namespace sdistill {
namespace metrics {

namespace {

void check_unit(const ArrayXd& v, const char* what) {
    const double n = l2_norm(v);
    if (std::abs(n - 1.0) > 1e-6) {
        throw std::runtime_error(std::string("embedder failure: ") + what +
                                 " is not L2-normalized (norm=" + std::to_string(n) + ")");
    }
}

}  // namespace

double mse(const ArrayXd& a, const ArrayXd& b) {
    require_same_shape(a, b, "mse");
    return (a - b).square().mean();
}

double region_mse(const ArrayXd& a, const ArrayXd& b, const std::vector<int>& indices) {
    require_same_shape(a, b, "region_mse");
    require(!indices.empty(), "region_mse: empty region");
    double acc = 0.0;
    for (int i : indices) {
        require(i >= 0 && i < a.size(), "region_mse: index out of range");
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc / static_cast<double>(indices.size());
}

double clip_similarity(const ArrayXd& image, const std::string& prompt, const Embedder& embedder) {
    const ArrayXd ei = embedder.embed_image(image);
    const ArrayXd et = embedder.embed_text(prompt);
    require_same_shape(ei, et, "clip_similarity embeddings");
    check_unit(ei, "image embedding");
    check_unit(et, "text embedding");
    return (ei * et).sum();
}

double directional_similarity(const ArrayXd& src_image, const ArrayXd& edited_image,
                              const std::string& src_prompt, const std::string& tgt_prompt,
                              const Embedder& embedder) {
    const ArrayXd di = embedder.embed_image(edited_image) - embedder.embed_image(src_image);
    const ArrayXd dt = embedder.embed_text(tgt_prompt) - embedder.embed_text(src_prompt);
    require_same_shape(di, dt, "directional_similarity embeddings");
    const double ni = l2_norm(di);
    const double nt = l2_norm(dt);
    if (ni < 1e-9 || nt < 1e-9) {
        return 0.0;
    }
    return (di * dt).sum() / (ni * nt);
}

PixelSpaceEmbedder::PixelSpaceEmbedder(std::map<std::string, ArrayXd> prompt_vectors)
    : prompt_vectors_(std::move(prompt_vectors)) {
    for (auto& [id, v] : prompt_vectors_) {
        const double n = l2_norm(v);
        require(n > 1e-12, "prompt vector for '" + id + "' has zero norm");
        v /= n;
    }
}

ArrayXd PixelSpaceEmbedder::embed_image(const ArrayXd& image) const {
    const double n = l2_norm(image);
    require(n > 1e-12, "cannot embed an all-zero image");
    return image / n;
}

ArrayXd PixelSpaceEmbedder::embed_text(const std::string& prompt) const {
    auto it = prompt_vectors_.find(prompt);
    if (it == prompt_vectors_.end()) {
        throw std::invalid_argument("no embedding registered for prompt: " + prompt);
    }
    return it->second;
}

}  // namespace metrics
}  // namespace sdistill
