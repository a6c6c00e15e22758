#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "evt/errors.hpp"
#include "evt/tensor.hpp"

namespace evt {

inline constexpr int kNmnistWidth = 34;
inline constexpr int kNmnistHeight = 34;

struct Event {
    int x = 0;
    int y = 0;
    int64_t t = 0;  // microseconds
    int p = 1;      // −1 or +1
};

struct EventStream {
    std::vector<Event> events;  // nondecreasing in t
    int width = kNmnistWidth;
    int height = kNmnistHeight;

    size_t size() const { return events.size(); }
    bool empty() const { return events.empty(); }
};

struct LabeledSample {
    EventStream stream;
    int label = 0;
};

// Throws if coordinates, polarity, timestamps, or ordering violate the model.
void validate_stream(const EventStream& s);

// ATIS 5-byte records: x, y, (polarity bit | t<22:16>), t<15:8>, t<7:0>.
EventStream load_nmnist_bin(const std::vector<unsigned char>& bytes, int width = kNmnistWidth,
                            int height = kNmnistHeight);
std::vector<unsigned char> encode_nmnist_bin(const EventStream& s);

EventStream load_nmnist_file(const std::string& path, int width = kNmnistWidth,
                             int height = kNmnistHeight);
void save_nmnist_file(const EventStream& s, const std::string& path);

// N×4 rows of (x/(W−1), y/(H−1), (t−t_min)/(t_max−t_min), p).
// Degenerate duration maps all times to 0.
Tensor<double> normalize_events(const EventStream& s);

// Uniform subsample without replacement, temporal order preserved.
// Streams of n or fewer events pass through whole.
EventStream sample_events(const EventStream& s, size_t n, uint64_t seed);

struct ManifestEntry {
    std::string path;
    int label = 0;
};
bool operator==(const ManifestEntry& a, const ManifestEntry& b);

// Newline-delimited "path<TAB>label".
std::vector<ManifestEntry> read_manifest(const std::string& path);
void write_manifest(const std::vector<ManifestEntry>& entries, const std::string& path);

// Scans root/<class>/<sample>.bin where <class> directories are integers.
std::vector<ManifestEntry> scan_dataset_root(const std::string& root);

// Per-class stratified split, deterministic in the seed. Each class needs
// at least 2 samples so both sides stay nonempty.
std::pair<std::vector<ManifestEntry>, std::vector<ManifestEntry>> train_test_split(
    const std::vector<ManifestEntry>& manifest, double fraction, uint64_t seed);

// Class k is a bar at angle k·pi/num_classes sweeping across a 34×34 sensor
// over 100 ms, leading edge positive, plus 5% uniform noise.
std::vector<LabeledSample> synth_dataset(int num_classes, int samples_per_class,
                                         int events_per_sample, uint64_t seed);

}  // namespace evt
