#include <algorithm>
#include <cmath>

#include "evt/events.hpp"
#include "evt/rng.hpp"

namespace evt {

namespace {

constexpr int64_t kWindowUs = 100000;  // 100 ms sweep
constexpr double kBarHalfLen = 12.0;
constexpr double kNoiseShare = 0.05;

int clamp_px(double v, int hi) {
    int p = static_cast<int>(std::lround(v));
    return std::min(std::max(p, 0), hi);
}

EventStream synth_stream(int cls, int num_classes, int events_per_sample, Rng& rng) {
    EventStream s;
    const double theta = static_cast<double>(cls) * M_PI / static_cast<double>(num_classes);
    // Bar axis at theta; the bar translates along its normal over the window.
    const double ax = std::cos(theta), ay = std::sin(theta);
    const double nx = -ay, ny = ax;
    const double cx = (s.width - 1) / 2.0, cy = (s.height - 1) / 2.0;
    const double sweep = 24.0;  // total travel in pixels

    const int n_noise = static_cast<int>(std::lround(kNoiseShare * events_per_sample));
    const int n_signal = events_per_sample - n_noise;

    s.events.reserve(static_cast<size_t>(events_per_sample));
    for (int i = 0; i < n_signal; ++i) {
        const double phase = rng.next_double();  // position of the sweep in [0,1)
        const double u = rng.uniform(-kBarHalfLen, kBarHalfLen);
        // Edge side decides polarity: pixels ahead of the motion brighten.
        const double side = rng.next_double() < 0.5 ? 0.6 : -0.6;
        const double ox = cx + (phase - 0.5) * sweep * nx + u * ax + side * nx;
        const double oy = cy + (phase - 0.5) * sweep * ny + u * ay + side * ny;
        Event e;
        e.x = clamp_px(ox + rng.uniform(-0.5, 0.5), s.width - 1);
        e.y = clamp_px(oy + rng.uniform(-0.5, 0.5), s.height - 1);
        e.t = static_cast<int64_t>(phase * static_cast<double>(kWindowUs));
        e.p = side > 0 ? 1 : -1;
        s.events.push_back(e);
    }
    for (int i = 0; i < n_noise; ++i) {
        Event e;
        e.x = static_cast<int>(rng.next_below(static_cast<uint64_t>(s.width)));
        e.y = static_cast<int>(rng.next_below(static_cast<uint64_t>(s.height)));
        e.t = static_cast<int64_t>(rng.next_double() * static_cast<double>(kWindowUs));
        e.p = rng.next_double() < 0.5 ? 1 : -1;
        s.events.push_back(e);
    }
    std::stable_sort(s.events.begin(), s.events.end(),
                     [](const Event& a, const Event& b) { return a.t < b.t; });
    validate_stream(s);
    return s;
}

}  // namespace

std::vector<LabeledSample> synth_dataset(int num_classes, int samples_per_class,
                                         int events_per_sample, uint64_t seed) {
    if (num_classes < 1 || samples_per_class < 1 || events_per_sample < 1)
        throw ConfigError("synth_dataset: all counts must be >= 1");
    std::vector<LabeledSample> out;
    out.reserve(static_cast<size_t>(num_classes) * static_cast<size_t>(samples_per_class));
    for (int cls = 0; cls < num_classes; ++cls)
        for (int i = 0; i < samples_per_class; ++i) {
            Rng rng(seed, "synth/class" + std::to_string(cls) + "/sample" + std::to_string(i));
            out.push_back({synth_stream(cls, num_classes, events_per_sample, rng), cls});
        }
    return out;
}

}  // namespace evt
