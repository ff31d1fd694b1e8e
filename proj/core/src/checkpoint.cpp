#include "mtecg/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

#include "json.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian; big-endian hosts are unsupported");

namespace mtecg {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'M', 'T', 'E', 'C', 'G', 'C', 'K', '1'};
constexpr std::uint32_t kVersion = 1;

std::uint32_t crc32(const unsigned char* data, std::size_t len) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t c = 0xffffffffu;
    for (std::size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xffu] ^ (c >> 8);
    return c ^ 0xffffffffu;
}

json model_to_json(const ModelConfig& m) {
    json j;
    j["t_len"] = m.t_len;
    j["d_seg"] = m.d_seg;
    j["d_model"] = m.d_model;
    j["n_heads"] = m.n_heads;
    j["n_layers"] = m.n_layers;
    j["d_decoder"] = m.d_decoder;
    j["decoder_heads"] = m.decoder_heads;
    j["mlp_ratio"] = m.mlp_ratio;
    j["droppath_rate"] = m.droppath_rate;
    j["n_labels"] = m.n_labels;
    j["classifier"] = classifier_name(m.classifier);
    j["ln_eps"] = m.ln_eps;
    return j;
}

ModelConfig model_from_json(const json& j) {
    ModelConfig m;
    m.t_len = j.at("t_len").get<int>();
    m.d_seg = j.at("d_seg").get<int>();
    m.d_model = j.at("d_model").get<int>();
    m.n_heads = j.at("n_heads").get<int>();
    m.n_layers = j.at("n_layers").get<int>();
    m.d_decoder = j.at("d_decoder").get<int>();
    m.decoder_heads = j.at("decoder_heads").get<int>();
    m.mlp_ratio = j.at("mlp_ratio").get<double>();
    m.droppath_rate = j.at("droppath_rate").get<double>();
    m.n_labels = j.at("n_labels").get<int>();
    m.classifier = parse_classifier(j.at("classifier").get<std::string>());
    m.ln_eps = j.at("ln_eps").get<double>();
    return m;
}

void append_store(json& index, std::vector<const Tensor*>& payloads, const ParameterStore& store,
                  const char* set) {
    for (const auto& name : store.names()) {
        const Tensor& t = store.at(name);
        json e;
        e["name"] = name;
        e["rows"] = t.rows();
        e["cols"] = t.cols();
        e["set"] = set;
        index.push_back(std::move(e));
        payloads.push_back(&t);
    }
}

} // namespace

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    json header;
    header["stage"] = ck.stage;
    header["model"] = model_to_json(ck.model);
    header["target"] = {{"kind", target_kind_name(ck.target.kind)},
                        {"epsilon", ck.target.epsilon}};
    header["masking_ratio"] = ck.masking_ratio;
    header["optimizer"] = {{"beta1", ck.optimizer.beta1},
                           {"beta2", ck.optimizer.beta2},
                           {"weight_decay", ck.optimizer.weight_decay},
                           {"base_lr", ck.optimizer.base_lr},
                           {"batch_size", ck.optimizer.batch_size},
                           {"eps", ck.optimizer.eps}};
    header["schedule"] = {{"total_epochs", ck.schedule.total_epochs},
                          {"warmup_epochs", ck.schedule.warmup_epochs},
                          {"steps_per_epoch", ck.schedule.steps_per_epoch},
                          {"min_lr", ck.schedule.min_lr}};
    header["step"] = ck.opt_state.step;
    header["epochs_done"] = ck.epochs_done;
    header["rng_state"] = ck.rng_state;

    json index = json::array();
    std::vector<const Tensor*> payloads;
    append_store(index, payloads, ck.params, "params");
    append_store(index, payloads, ck.opt_state.m, "m");
    append_store(index, payloads, ck.opt_state.v, "v");
    header["tensors"] = std::move(index);

    const std::string hs = header.dump();
    std::vector<unsigned char> buf;
    buf.reserve(hs.size() + 64);
    buf.insert(buf.end(), kMagic, kMagic + 8);
    auto put_u32 = [&buf](std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xffu));
    };
    put_u32(kVersion);
    put_u32(static_cast<std::uint32_t>(hs.size()));
    buf.insert(buf.end(), hs.begin(), hs.end());
    for (const Tensor* t : payloads) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(t->data());
        buf.insert(buf.end(), bytes, bytes + t->numel() * sizeof(double));
    }
    put_u32(crc32(buf.data(), buf.size()));

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw std::runtime_error("short write on checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
    auto corrupt = [&path](const std::string& why) -> std::runtime_error {
        return std::runtime_error("checkpoint " + path.string() + ": " + why);
    };
    if (buf.size() < 20) throw corrupt("truncated header");
    if (std::memcmp(buf.data(), kMagic, 8) != 0) throw corrupt("not a checkpoint file");
    auto get_u32 = [&buf](std::size_t at) {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[at + i]) << (8 * i);
        return v;
    };
    const std::uint32_t version = get_u32(8);
    if (version != kVersion) {
        throw corrupt("unsupported version " + std::to_string(version));
    }
    const std::uint32_t crc_stored = get_u32(buf.size() - 4);
    const std::uint32_t crc_actual = crc32(buf.data(), buf.size() - 4);
    if (crc_stored != crc_actual) throw corrupt("checksum mismatch");

    const std::size_t header_len = get_u32(12);
    if (16 + header_len + 4 > buf.size()) throw corrupt("truncated JSON header");
    json header;
    try {
        header = json::parse(buf.begin() + 16, buf.begin() + 16 + header_len);
    } catch (const json::exception& e) {
        throw corrupt(std::string("bad JSON header: ") + e.what());
    }

    Checkpoint ck;
    std::size_t at = 16 + header_len;
    try {
        ck.stage = header.at("stage").get<std::string>();
        ck.model = model_from_json(header.at("model"));
        ck.target.kind = parse_target_kind(header.at("target").at("kind").get<std::string>());
        ck.target.epsilon = header.at("target").at("epsilon").get<double>();
        ck.masking_ratio = header.at("masking_ratio").get<double>();
        const json& o = header.at("optimizer");
        ck.optimizer.beta1 = o.at("beta1").get<double>();
        ck.optimizer.beta2 = o.at("beta2").get<double>();
        ck.optimizer.weight_decay = o.at("weight_decay").get<double>();
        ck.optimizer.base_lr = o.at("base_lr").get<double>();
        ck.optimizer.batch_size = o.at("batch_size").get<int>();
        ck.optimizer.eps = o.at("eps").get<double>();
        const json& s = header.at("schedule");
        ck.schedule.total_epochs = s.at("total_epochs").get<int>();
        ck.schedule.warmup_epochs = s.at("warmup_epochs").get<int>();
        ck.schedule.steps_per_epoch = s.at("steps_per_epoch").get<int>();
        ck.schedule.min_lr = s.at("min_lr").get<double>();
        ck.opt_state.step = header.at("step").get<std::int64_t>();
        ck.epochs_done = header.at("epochs_done").get<int>();
        ck.rng_state = header.at("rng_state").get<std::string>();

        for (const auto& e : header.at("tensors")) {
            const auto name = e.at("name").get<std::string>();
            const int rows = e.at("rows").get<int>();
            const int cols = e.at("cols").get<int>();
            const auto set = e.at("set").get<std::string>();
            Tensor t(rows, cols);
            const std::size_t nbytes = static_cast<std::size_t>(t.numel()) * sizeof(double);
            if (at + nbytes + 4 > buf.size()) throw corrupt("truncated tensor payload " + name);
            std::memcpy(t.data(), buf.data() + at, nbytes);
            at += nbytes;
            if (set == "params") ck.params.add(name, std::move(t));
            else if (set == "m") ck.opt_state.m.add(name, std::move(t));
            else if (set == "v") ck.opt_state.v.add(name, std::move(t));
            else throw corrupt("unknown tensor set '" + set + "'");
        }
    } catch (const json::exception& e) {
        throw corrupt(std::string("bad header field: ") + e.what());
    }
    if (at + 4 != buf.size()) throw corrupt("trailing bytes after payloads");
    return ck;
}

} // namespace mtecg
