#include "mtecg/signal.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"

#include "mtecg/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "signal files are little-endian; big-endian hosts are unsupported");

namespace mtecg {

namespace {

using nlohmann::json;

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Order-defining hash for split assignment; must not depend on the platform's
// std::hash.
std::uint64_t split_hash(const std::string& key, std::uint64_t seed) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : key) {
        h = (h ^ c) * 1099511628211ull;
    }
    return splitmix64(h ^ splitmix64(seed));
}

[[noreturn]] void record_error(const std::string& id, const std::string& what) {
    throw std::runtime_error("record " + id + ": " + what);
}

std::vector<float> read_signal_file(const std::filesystem::path& path,
                                    const std::string& id, int k, int q) {
    std::ifstream in(path, std::ios::binary);
    if (!in) record_error(id, "cannot open signal file " + path.string());
    in.seekg(0, std::ios::end);
    const auto bytes = static_cast<std::int64_t>(in.tellg());
    const std::int64_t expected = static_cast<std::int64_t>(k) * q * 4;
    if (bytes != expected) {
        record_error(id, "signal file " + path.string() + " holds " + std::to_string(bytes) +
                         " bytes, expected " + std::to_string(expected));
    }
    in.seekg(0, std::ios::beg);
    std::vector<float> samples(static_cast<std::size_t>(k) * q);
    in.read(reinterpret_cast<char*>(samples.data()), expected);
    if (!in) record_error(id, "short read on signal file " + path.string());
    return samples;
}

} // namespace

Tensor EcgRecord::signal_matrix() const {
    Tensor m(k_leads, q_samples);
    double* p = m.data();
    for (std::size_t i = 0; i < samples.size(); ++i) p[i] = samples[i];
    return m;
}

void Dataset::validate() const {
    std::unordered_set<std::string> seen;
    for (const auto& r : records) {
        if (r.k_leads < 1 || r.q_samples < 1) record_error(r.id, "non-positive signal shape");
        if (r.sampling_rate_hz < 1) record_error(r.id, "non-positive sampling rate");
        if (r.k_leads != records[0].k_leads || r.q_samples != records[0].q_samples ||
            r.sampling_rate_hz != records[0].sampling_rate_hz) {
            record_error(r.id, "shape or rate differs from the rest of the dataset");
        }
        if (static_cast<int>(r.labels.size()) != n_labels()) {
            record_error(r.id, "label vector length " + std::to_string(r.labels.size()) +
                               " does not match label set size " + std::to_string(n_labels()));
        }
        for (std::uint8_t v : r.labels) {
            if (v > 1) record_error(r.id, "label value " + std::to_string(v) + " is not 0 or 1");
        }
        if (r.samples.size() != static_cast<std::size_t>(r.k_leads) * r.q_samples) {
            record_error(r.id, "sample count does not match K*Q");
        }
        for (float v : r.samples) {
            if (!std::isfinite(v)) record_error(r.id, "non-finite sample value");
        }
        if (!seen.insert(r.id).second) record_error(r.id, "duplicate record id");
    }
}

Dataset load_dataset(const std::filesystem::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw std::runtime_error("cannot open manifest " + manifest_path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error("manifest " + manifest_path.string() + ": " + e.what());
    }

    Dataset ds;
    const auto base = manifest_path.parent_path();
    try {
        ds.label_names = j.at("label_names").get<std::vector<std::string>>();
        ds.provenance = j.value("provenance", std::string{});
        for (const auto& rj : j.at("records")) {
            EcgRecord r;
            r.id = rj.at("id").get<std::string>();
            r.patient_id = rj.value("patient_id", std::string{});
            r.k_leads = rj.at("k").get<int>();
            r.q_samples = rj.at("q").get<int>();
            r.sampling_rate_hz = rj.at("sampling_rate_hz").get<int>();
            for (const auto& lv : rj.at("labels")) {
                const int v = lv.get<int>();
                if (v != 0 && v != 1) record_error(r.id, "label entries must be 0 or 1");
                r.labels.push_back(static_cast<std::uint8_t>(v));
            }
            const auto rel = std::filesystem::path(rj.at("path").get<std::string>());
            r.samples = read_signal_file(rel.is_absolute() ? rel : base / rel, r.id,
                                         r.k_leads, r.q_samples);
            ds.records.push_back(std::move(r));
        }
    } catch (const json::exception& e) {
        throw std::runtime_error("manifest " + manifest_path.string() + ": " + e.what());
    }
    ds.validate();
    return ds;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir,
                  const std::string& manifest_name) {
    dataset.validate();
    std::filesystem::create_directories(dir / "signals");

    json records = json::array();
    for (const auto& r : dataset.records) {
        const std::string rel = "signals/" + r.id + ".f32";
        std::ofstream out(dir / rel, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + (dir / rel).string());
        out.write(reinterpret_cast<const char*>(r.samples.data()),
                  static_cast<std::streamsize>(r.samples.size() * 4));
        if (!out) throw std::runtime_error("short write on " + (dir / rel).string());

        json rj;
        rj["id"] = r.id;
        rj["path"] = rel;
        rj["k"] = r.k_leads;
        rj["q"] = r.q_samples;
        rj["sampling_rate_hz"] = r.sampling_rate_hz;
        rj["labels"] = json::array();
        for (auto v : r.labels) rj["labels"].push_back(static_cast<int>(v));
        if (!r.patient_id.empty()) rj["patient_id"] = r.patient_id;
        records.push_back(std::move(rj));
    }

    json j;
    j["label_names"] = dataset.label_names;
    if (!dataset.provenance.empty()) j["provenance"] = dataset.provenance;
    j["records"] = std::move(records);

    std::ofstream out(dir / manifest_name);
    if (!out) throw std::runtime_error("cannot write manifest in " + dir.string());
    out << j.dump(2) << "\n";
}

std::vector<float> synthesize_signal(int k_leads, int q_samples,
                                     const std::vector<std::uint8_t>& labels,
                                     std::uint64_t record_seed) {
    if (k_leads < 1 || q_samples < 1) {
        throw std::invalid_argument("synthesize_signal: non-positive shape");
    }
    const int n_beats = std::max(1, q_samples / 100);
    const double period = static_cast<double>(q_samples) / n_beats;

    Rng rng(record_seed);
    const double phase = (rng.uniform() - 0.5) * 0.2 * period;
    const double amp_jitter = 0.9 + 0.2 * rng.uniform();

    // P/Q/R/S/T bumps: position and width as fractions of the beat period.
    struct Bump { double frac, width, amp; };
    Bump bumps[5] = {
        {0.30, 0.035, 0.15},  // P
        {0.47, 0.012, -0.20}, // Q
        {0.50, 0.015, 1.00},  // R
        {0.53, 0.012, -0.25}, // S
        {0.72, 0.055, 0.30},  // T
    };
    auto on = [&](std::size_t j) { return j < labels.size() && labels[j] != 0; };
    if (on(0)) bumps[4].amp *= 2.2;
    if (on(1)) bumps[2].amp *= 1.6;
    if (on(2)) bumps[0].amp *= 3.0;
    if (on(3)) {
        bumps[1].width *= 2.0;
        bumps[2].width *= 2.0;
        bumps[3].width *= 2.0;
    }
    if (on(4)) bumps[3].amp *= 3.0;

    std::vector<double> base(q_samples, 0.0);
    for (int b = 0; b < n_beats; ++b) {
        const double beat_start = b * period + phase;
        for (const auto& bump : bumps) {
            const double center = beat_start + bump.frac * period;
            const double width = bump.width * period;
            const int lo = std::max(0, static_cast<int>(std::floor(center - 5.0 * width)));
            const int hi = std::min(q_samples - 1, static_cast<int>(std::ceil(center + 5.0 * width)));
            for (int t = lo; t <= hi; ++t) {
                const double z = (t - center) / width;
                base[t] += bump.amp * std::exp(-0.5 * z * z);
            }
        }
    }
    for (std::size_t j = 5; j < labels.size(); ++j) {
        if (labels[j] == 0) continue;
        const double cycles = n_beats * (j + 2.0) + 1.0;
        for (int t = 0; t < q_samples; ++t) {
            base[t] += 0.25 * std::sin(2.0 * std::numbers::pi * cycles * t / q_samples);
        }
    }

    std::vector<float> samples(static_cast<std::size_t>(k_leads) * q_samples);
    for (int k = 0; k < k_leads; ++k) {
        const double lead_scale = 0.6 + 0.5 * (k + 1.0) / k_leads;
        for (int t = 0; t < q_samples; ++t) {
            double v = lead_scale * amp_jitter * base[t] + 0.02 * rng.normal();
            v = std::clamp(v, -4.0, 4.0);
            samples[static_cast<std::size_t>(k) * q_samples + t] = static_cast<float>(v);
        }
    }
    return samples;
}

Dataset generate_synthetic(int n_records, int k_leads, int q_samples, int n_labels,
                           std::uint64_t seed) {
    if (n_records < 1 || k_leads < 1 || q_samples < 1 || n_labels < 1) {
        throw std::invalid_argument("generate_synthetic: all sizes must be positive");
    }
    Dataset ds;
    for (int j = 0; j < n_labels; ++j) {
        ds.label_names.push_back("label_" + std::to_string(j));
    }
    ds.provenance = "synthetic records=" + std::to_string(n_records) +
                    " leads=" + std::to_string(k_leads) +
                    " samples=" + std::to_string(q_samples) +
                    " labels=" + std::to_string(n_labels) +
                    " seed=" + std::to_string(seed);

    Rng master(seed);
    for (int i = 0; i < n_records; ++i) {
        EcgRecord r;
        char buf[32];
        std::snprintf(buf, sizeof buf, "rec%04d", i);
        r.id = buf;
        r.k_leads = k_leads;
        r.q_samples = q_samples;
        r.sampling_rate_hz = 500;
        // Cycle through label patterns so every label is positive in half the
        // records; small tasks see every combination.
        r.labels.resize(n_labels);
        for (int j = 0; j < n_labels && j < 62; ++j) {
            r.labels[j] = static_cast<std::uint8_t>((static_cast<std::uint64_t>(i) >> j) & 1u);
        }
        const std::uint64_t record_seed = master.next_u64();
        r.samples = synthesize_signal(k_leads, q_samples, r.labels, record_seed);
        ds.records.push_back(std::move(r));
    }
    return ds;
}

SplitResult split_dataset(const Dataset& dataset, const SplitSpec& spec) {
    if (dataset.records.empty()) throw std::invalid_argument("split_dataset: empty dataset");
    const double f[3] = {spec.train_fraction, spec.val_fraction, spec.test_fraction};
    for (double x : f) {
        if (!(x > 0.0 && x < 1.0)) {
            throw std::invalid_argument("split_dataset: fractions must lie in (0,1)");
        }
    }
    if (std::fabs(f[0] + f[1] + f[2] - 1.0) > 1e-9) {
        throw std::invalid_argument("split_dataset: fractions must sum to 1");
    }

    auto group_key = [](const EcgRecord& r) {
        return r.patient_id.empty() ? r.id : r.patient_id;
    };
    std::vector<std::string> groups;
    std::unordered_set<std::string> seen;
    for (const auto& r : dataset.records) {
        if (seen.insert(group_key(r)).second) groups.push_back(group_key(r));
    }
    std::sort(groups.begin(), groups.end(), [&](const std::string& a, const std::string& b) {
        const auto ha = split_hash(a, spec.seed), hb = split_hash(b, spec.seed);
        return ha != hb ? ha < hb : a < b;
    });

    const auto n_groups = static_cast<std::int64_t>(groups.size());
    const auto n_val = std::llround(spec.val_fraction * n_groups);
    const auto n_test = std::llround(spec.test_fraction * n_groups);
    const auto n_train = n_groups - n_val - n_test;
    if (n_train < 1 || n_val < 1 || n_test < 1) {
        throw std::runtime_error("split_dataset: a split part would be empty (" +
                                 std::to_string(n_train) + "/" + std::to_string(n_val) + "/" +
                                 std::to_string(n_test) + " groups)");
    }

    enum Part { train = 0, val = 1, test = 2 };
    std::unordered_map<std::string, Part> part_of;
    for (std::int64_t i = 0; i < n_groups; ++i) {
        part_of[groups[i]] = i < n_train ? train : (i < n_train + n_val ? val : test);
    }

    SplitResult out;
    Dataset* parts[3] = {&out.train, &out.val, &out.test};
    for (Dataset* d : parts) {
        d->label_names = dataset.label_names;
        d->provenance = dataset.provenance;
    }
    for (const auto& r : dataset.records) {
        parts[part_of.at(group_key(r))]->records.push_back(r);
    }
    return out;
}

} // namespace mtecg
