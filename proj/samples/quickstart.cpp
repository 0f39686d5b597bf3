// Quickstart: generate a few synthetic retail hierarchies, train the method
// selector on the early origins and run it forward over the rest.

#include "hfselect/chf.hpp"
#include "hfselect/io.hpp"

#include <iostream>

int main() {
    using namespace hfselect;

    SynthConfig synth;
    synth.n_hierarchies = 8;
    synth.n_periods = 80;
    const auto data = generate_synthetic(synth);

    BaseModelSpec model;  // AR(2) on sales with the price as regressor
    const std::size_t p = 26, r = 56, h = 4;

    const auto training = build_training_set(data, model, p, r, h);
    std::cout << training.rows.size() << " training rows: BU " << training.label_counts[0] << ", TD " << training.label_counts[1]
              << ", COM " << training.label_counts[2] << "\n";

    GbtConfig gbt;
    gbt.n_rounds = 100;
    const Selector selector = train_selector(training, gbt);

    OnlineOptions online;
    online.gbt = gbt;
    const auto run = run_online(data, selector, model, r, synth.n_periods - h, h, online, &training);

    for (const auto& s : run.selections)
        if (s.origin == r) std::cout << s.hierarchy_id << " at origin " << s.origin << ": " << to_string(s.method) << "\n";

    const std::vector<LevelTable> tables{level_table(run.records, Metric::mase, {"BU", "TD", "COM", "CHF"})};
    std::cout << "\n" << level_table_text(tables);
    return 0;
}
