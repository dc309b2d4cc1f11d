// Demonstrates checkpoint surgery: copy the embedding table and the first
// encoder layer of a cross encoder into a fresh 2-layer dual encoder, then
// verify that hidden states agree up to the copied depth on probe sentences.

#include <cstdio>

#include "ceinfuse/ceinfuse.hpp"

int main() {
    using namespace ceinfuse;

    Vocab vocab = make_vocab({"alpha", "beta", "gamma", "delta", "epsilon", "zeta"});

    ModelConfig cfg;
    cfg.num_layers = 4;
    cfg.hidden = 32;
    cfg.heads = 4;
    cfg.ff = 64;
    cfg.vocab_size = static_cast<int>(vocab.size());
    cfg.max_positions = 32;
    cfg.role = ModelRole::CrossEncoder;
    EncoderWeights ce = init_random(cfg, 7);

    const std::size_t k_copy = 1;
    EncoderWeights de = infuse(ce, 2, k_copy, 99);
    std::printf("infused embeddings + %zu layer(s) of a %d-layer cross encoder into a "
                "%d-layer dual encoder\n",
                k_copy, ce.config.num_layers, de.config.num_layers);

    std::vector<std::string> probes = {"alpha beta gamma", "delta epsilon", "zeta zeta alpha"};
    InfusionReport report = verify_infusion(ce, de, k_copy, probes, vocab, 32);
    for (std::size_t i = 0; i < report.max_dev_per_index.size(); ++i) {
        std::printf("hidden index %zu: max |ce - de| = %.3g%s\n", i, report.max_dev_per_index[i],
                    i == k_copy ? "  <- last copied layer" : "");
    }
    std::printf("verification %s (tolerance %.1g)\n", report.pass ? "passed" : "FAILED",
                report.tolerance);
    return report.pass ? 0 : 1;
}
