// Trains a tiny dual encoder with MNRL on four hand-written examples until it
// memorizes them, printing the loss curve along the way.

#include <cstdio>

#include "ceinfuse/ceinfuse.hpp"

int main() {
    using namespace ceinfuse;

    Vocab vocab = make_vocab({"sun", "moon", "star", "rock", "tree", "fish", "bird", "rain"});

    ModelConfig cfg;
    cfg.num_layers = 2;
    cfg.hidden = 32;
    cfg.heads = 4;
    cfg.ff = 64;
    cfg.vocab_size = static_cast<int>(vocab.size());
    cfg.max_positions = 16;
    cfg.role = ModelRole::DualEncoder;
    EncoderWeights w = init_random(cfg, 11);

    // Negatives deliberately avoid word-for-word overlap with any query: a
    // mean-pooled encoder cannot separate a query from a bag-identical
    // candidate, and MNRL would plateau instead of memorizing.
    std::vector<TrainExample> data = {
        {"sun star", "sun sun star", {"rock rain", "fish tree"}},
        {"moon rain", "rain moon moon", {"star rock", "bird tree"}},
        {"tree rock", "rock rock tree", {"moon fish", "sun bird"}},
        {"fish bird", "bird fish fish", {"rain star", "moon tree"}},
    };

    TrainConfig train_cfg;
    train_cfg.batch = 4;
    train_cfg.epochs = 60;
    train_cfg.lr = 5e-3;
    train_cfg.warmup_frac = 0.1;
    train_cfg.max_len = 16;
    train_cfg.seed = 3;

    TrainResult result = train(w, TrainRole::DualEncoderMnrl, data, train_cfg, vocab);
    for (std::size_t i = 0; i < result.curve.size(); i += 10) {
        const LossPoint& p = result.curve[i];
        std::printf("step %3ld  loss %.5f  lr %.2e\n", p.step, p.loss, p.lr);
    }
    const LossPoint& last = result.curve.back();
    std::printf("step %3ld  loss %.5f  lr %.2e\n", last.step, last.loss, last.lr);
    std::printf("final loss %s 0.05\n", last.loss < 0.05 ? "<" : ">=");
    return 0;
}
