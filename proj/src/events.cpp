#include "evt/events.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "evt/rng.hpp"

namespace fs = std::filesystem;

namespace evt {

void validate_stream(const EventStream& s) {
    int64_t last_t = -1;
    for (const Event& e : s.events) {
        if (e.x < 0 || e.x >= s.width || e.y < 0 || e.y >= s.height)
            throw FormatError("event coordinates outside sensor (" + std::to_string(e.x) + "," +
                              std::to_string(e.y) + ")");
        if (e.p != 1 && e.p != -1) throw FormatError("event polarity must be -1 or +1");
        if (e.t < 0) throw FormatError("negative event timestamp");
        if (e.t < last_t) throw FormatError("events not sorted by timestamp");
        last_t = e.t;
    }
}

EventStream load_nmnist_bin(const std::vector<unsigned char>& bytes, int width, int height) {
    if (bytes.empty()) throw FormatError("empty event file");
    if (bytes.size() % 5 != 0)
        throw FormatError("event file length " + std::to_string(bytes.size()) +
                          " is not a multiple of 5");
    EventStream s;
    s.width = width;
    s.height = height;
    s.events.reserve(bytes.size() / 5);
    for (size_t i = 0; i < bytes.size(); i += 5) {
        Event e;
        e.x = bytes[i];
        e.y = bytes[i + 1];
        e.p = (bytes[i + 2] & 0x80) ? 1 : -1;
        e.t = (int64_t{bytes[i + 2] & 0x7F} << 16) | (int64_t{bytes[i + 3]} << 8) |
              int64_t{bytes[i + 4]};
        s.events.push_back(e);
    }
    // Stable sort keeps file order among equal timestamps, so a sorted file
    // round-trips byte for byte through the encoder.
    std::stable_sort(s.events.begin(), s.events.end(),
                     [](const Event& a, const Event& b) { return a.t < b.t; });
    validate_stream(s);
    return s;
}

std::vector<unsigned char> encode_nmnist_bin(const EventStream& s) {
    validate_stream(s);
    std::vector<unsigned char> out;
    out.reserve(s.events.size() * 5);
    for (const Event& e : s.events) {
        if (e.x > 0xFF || e.y > 0xFF) throw FormatError("coordinate does not fit codec byte");
        if (e.t > 0x7FFFFF) throw FormatError("timestamp exceeds 23-bit codec range");
        out.push_back(static_cast<unsigned char>(e.x));
        out.push_back(static_cast<unsigned char>(e.y));
        out.push_back(static_cast<unsigned char>(((e.p == 1) ? 0x80 : 0x00) | ((e.t >> 16) & 0x7F)));
        out.push_back(static_cast<unsigned char>((e.t >> 8) & 0xFF));
        out.push_back(static_cast<unsigned char>(e.t & 0xFF));
    }
    return out;
}

EventStream load_nmnist_file(const std::string& path, int width, int height) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open event file: " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());
    try {
        return load_nmnist_bin(bytes, width, height);
    } catch (const FormatError& e) {
        throw FormatError(path + ": " + e.what());
    }
}

void save_nmnist_file(const EventStream& s, const std::string& path) {
    auto bytes = encode_nmnist_bin(s);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot write event file: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Tensor<double> normalize_events(const EventStream& s) {
    if (s.empty()) throw FormatError("cannot normalize an empty event stream");
    const int64_t t_min = s.events.front().t;
    const int64_t t_max = s.events.back().t;
    const int64_t dur = t_max - t_min;
    const double inv_x = 1.0 / std::max(s.width - 1, 1);
    const double inv_y = 1.0 / std::max(s.height - 1, 1);
    Tensor<double> out({s.size(), 4});
    for (size_t i = 0; i < s.size(); ++i) {
        const Event& e = s.events[i];
        out.at(i, 0) = e.x * inv_x;
        out.at(i, 1) = e.y * inv_y;
        out.at(i, 2) = dur == 0 ? 0.0 : static_cast<double>(e.t - t_min) / static_cast<double>(dur);
        out.at(i, 3) = static_cast<double>(e.p);
    }
    return out;
}

EventStream sample_events(const EventStream& s, size_t n, uint64_t seed) {
    if (n == 0) throw ConfigError("sample_events: n must be >= 1");
    if (s.size() <= n) return s;
    Rng rng(seed);
    auto keep = rng.sample_indices(s.size(), n);  // ascending, so t order survives
    EventStream out;
    out.width = s.width;
    out.height = s.height;
    out.events.reserve(n);
    for (size_t i : keep) out.events.push_back(s.events[i]);
    return out;
}

bool operator==(const ManifestEntry& a, const ManifestEntry& b) {
    return a.path == b.path && a.label == b.label;
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("cannot open manifest: " + path);
    std::vector<ManifestEntry> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        const size_t tab = line.find('\t');
        if (tab == std::string::npos || tab == 0)
            throw FormatError(path + ":" + std::to_string(lineno) + ": expected path<TAB>label");
        ManifestEntry e;
        e.path = line.substr(0, tab);
        const char* first = line.data() + tab + 1;
        const char* last = line.data() + line.size();
        auto [ptr, ec] = std::from_chars(first, last, e.label);
        if (ec != std::errc{} || ptr != last || e.label < 0)
            throw FormatError(path + ":" + std::to_string(lineno) + ": bad label");
        out.push_back(std::move(e));
    }
    return out;
}

void write_manifest(const std::vector<ManifestEntry>& entries, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw FormatError("cannot write manifest: " + path);
    for (const auto& e : entries) f << e.path << '\t' << e.label << '\n';
}

std::vector<ManifestEntry> scan_dataset_root(const std::string& root) {
    if (!fs::is_directory(root)) throw FormatError("dataset root is not a directory: " + root);
    std::vector<ManifestEntry> out;
    std::vector<fs::path> class_dirs;
    for (const auto& d : fs::directory_iterator(root))
        if (d.is_directory()) class_dirs.push_back(d.path());
    std::sort(class_dirs.begin(), class_dirs.end());
    for (const auto& dir : class_dirs) {
        const std::string name = dir.filename().string();
        int label = 0;
        auto [ptr, ec] = std::from_chars(name.data(), name.data() + name.size(), label);
        if (ec != std::errc{} || ptr != name.data() + name.size()) continue;  // non-class dir
        std::vector<fs::path> files;
        for (const auto& f : fs::directory_iterator(dir))
            if (f.is_regular_file() && f.path().extension() == ".bin") files.push_back(f.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) out.push_back({f.string(), label});
    }
    if (out.empty()) throw FormatError("no <class>/<sample>.bin files under " + root);
    return out;
}

std::pair<std::vector<ManifestEntry>, std::vector<ManifestEntry>> train_test_split(
    const std::vector<ManifestEntry>& manifest, double fraction, uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0))
        throw ConfigError("train_test_split: fraction must be in (0,1)");
    std::map<int, std::vector<size_t>> by_class;
    for (size_t i = 0; i < manifest.size(); ++i) by_class[manifest[i].label].push_back(i);

    std::vector<char> in_train(manifest.size(), 0);
    for (auto& [label, idx] : by_class) {
        if (idx.size() < 2)
            throw ConfigError("train_test_split: class " + std::to_string(label) +
                              " has fewer than 2 samples");
        Rng rng(seed, "split/class" + std::to_string(label));
        rng.shuffle(idx);
        size_t n_train = static_cast<size_t>(fraction * static_cast<double>(idx.size()) + 0.5);
        n_train = std::min(std::max<size_t>(n_train, 1), idx.size() - 1);
        for (size_t i = 0; i < n_train; ++i) in_train[idx[i]] = 1;
    }
    std::vector<ManifestEntry> train, test;
    for (size_t i = 0; i < manifest.size(); ++i)
        (in_train[i] ? train : test).push_back(manifest[i]);
    return {std::move(train), std::move(test)};
}

}  // namespace evt
