#pragma once

#include "sdistill/common.hpp"

#include <map>
#include <string>
#include <vector>

namespace sdistill {
namespace metrics {

// Embedding provider for similarity metrics. Implementations must return
// L2-normalized vectors (within 1e-6); perceptual networks plug in behind
// this interface, nothing heavier ships with the toolkit.
struct Embedder {
    virtual ~Embedder() = default;
    virtual ArrayXd embed_image(const ArrayXd& image) const = 0;
    virtual ArrayXd embed_text(const std::string& prompt) const = 0;
};

double mse(const ArrayXd& a, const ArrayXd& b);

// MSE over a subset of pixel indices.
double region_mse(const ArrayXd& a, const ArrayXd& b, const std::vector<int>& indices);

// Cosine similarity of image and prompt embeddings, in [-1, 1].
double clip_similarity(const ArrayXd& image, const std::string& prompt, const Embedder& embedder);

// Cosine between the image edit direction and the text edit direction.
// Returns 0 when either direction has norm below 1e-9.
double directional_similarity(const ArrayXd& src_image, const ArrayXd& edited_image,
                              const std::string& src_prompt, const std::string& tgt_prompt,
                              const Embedder& embedder);

// Desk-scale embedder: images embed as their L2-normalized pixel vector,
// prompts as the L2-normalized vector registered for them (typically a
// mixture mean). Stands in for CLIP-style encoders in oracle experiments.
class PixelSpaceEmbedder final : public Embedder {
public:
    explicit PixelSpaceEmbedder(std::map<std::string, ArrayXd> prompt_vectors);

    ArrayXd embed_image(const ArrayXd& image) const override;
    ArrayXd embed_text(const std::string& prompt) const override;

private:
    std::map<std::string, ArrayXd> prompt_vectors_;
};

}  // namespace metrics
}  // namespace sdistill
