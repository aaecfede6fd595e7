#include "nlosim/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "nlosim/common.hpp"

namespace nlosim::training {

namespace {

void put(std::string& buf, const void* p, std::size_t n) {
    buf.append(static_cast<const char*>(p), n);
}
void put_u32(std::string& buf, std::uint32_t v) { put(buf, &v, 4); }
void put_u64(std::string& buf, std::uint64_t v) { put(buf, &v, 8); }
void put_i32(std::string& buf, std::int32_t v) { put(buf, &v, 4); }
void put_str(std::string& buf, const std::string& s) {
    put_u32(buf, static_cast<std::uint32_t>(s.size()));
    buf.append(s);
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    void get(void* p, std::size_t n) {
        if (pos + n > buf.size()) throw IntegrityError("checkpoint: truncated payload");
        std::memcpy(p, buf.data() + pos, n);
        pos += n;
    }
    std::uint32_t u32() {
        std::uint32_t v;
        get(&v, 4);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v;
        get(&v, 8);
        return v;
    }
    std::int32_t i32() {
        std::int32_t v;
        get(&v, 4);
        return v;
    }
    std::string str() {
        std::uint32_t n = u32();
        if (pos + n > buf.size()) throw IntegrityError("checkpoint: truncated string");
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace

std::uint64_t Checkpoint::params_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, t] : arrays) {
        h = fnv1a64(name.data(), name.size(), h);
        h = fnv1a64(t.v.data(), t.v.size() * sizeof(nn::real_t), h);
    }
    return h;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    std::string buf;
    buf.append("NLCK1");
    put_u32(buf, ck.version);
    put_u64(buf, ck.config_hash);
    put_str(buf, ck.stage);
    put_str(buf, ck.arch_text);
    put_str(buf, ck.flags_text);
    put_i32(buf, ck.n_c);
    put_u32(buf, ck.epoch);
    put_str(buf, ck.metrics_json);

    put_u32(buf, static_cast<std::uint32_t>(ck.arrays.size()));
    for (const auto& [name, t] : ck.arrays) {
        put_str(buf, name);
        put_i32(buf, t.h);
        put_i32(buf, t.w);
        put_i32(buf, t.c);
        put(buf, t.v.data(), t.v.size() * sizeof(nn::real_t));
    }
    put_u32(buf, static_cast<std::uint32_t>(ck.optim.size()));
    for (const auto& [oname, entries] : ck.optim) {
        put_str(buf, oname);
        put_u32(buf, static_cast<std::uint32_t>(entries.size()));
        for (const auto& [key, data] : entries) {
            put_str(buf, key);
            put_u64(buf, data.size());
            put(buf, data.data(), data.size() * sizeof(double));
        }
    }
    put_u64(buf, fnv1a64(buf.data(), buf.size()));

    if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("checkpoint save: cannot open " + path.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("checkpoint save: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint load: cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    std::string buf = ss.str();
    if (buf.size() < 5 + 4 + 8) throw IntegrityError("checkpoint: file too small");
    if (buf.compare(0, 5, "NLCK1") != 0) throw IntegrityError("checkpoint: bad magic");

    std::uint64_t stored_hash;
    std::memcpy(&stored_hash, buf.data() + buf.size() - 8, 8);
    std::uint64_t actual = fnv1a64(buf.data(), buf.size() - 8);
    if (stored_hash != actual)
        throw IntegrityError("checkpoint: content hash mismatch (corrupt file)");

    Reader r{buf, 5};
    Checkpoint ck;
    ck.version = r.u32();
    if (ck.version != 1)
        throw IntegrityError("checkpoint: unsupported version " + std::to_string(ck.version));
    ck.config_hash = r.u64();
    ck.stage = r.str();
    ck.arch_text = r.str();
    ck.flags_text = r.str();
    ck.n_c = r.i32();
    ck.epoch = r.u32();
    ck.metrics_json = r.str();

    std::uint32_t n_arrays = r.u32();
    for (std::uint32_t i = 0; i < n_arrays; ++i) {
        std::string name = r.str();
        nn::Tensor t;
        t.h = r.i32();
        t.w = r.i32();
        t.c = r.i32();
        t.v.resize(static_cast<std::size_t>(t.h) * t.w * t.c);
        r.get(t.v.data(), t.v.size() * sizeof(nn::real_t));
        ck.arrays.emplace(std::move(name), std::move(t));
    }
    std::uint32_t n_optims = r.u32();
    for (std::uint32_t i = 0; i < n_optims; ++i) {
        std::string oname = r.str();
        std::uint32_t n_entries = r.u32();
        std::map<std::string, std::vector<double>> entries;
        for (std::uint32_t k = 0; k < n_entries; ++k) {
            std::string key = r.str();
            std::uint64_t count = r.u64();
            std::vector<double> data(count);
            r.get(data.data(), count * sizeof(double));
            entries.emplace(std::move(key), std::move(data));
        }
        ck.optim.emplace(std::move(oname), std::move(entries));
    }
    return ck;
}

void snapshot_params(const nn::ParamStore& store, Checkpoint& ck) {
    ck.arrays.clear();
    for (nn::ParamId id : store.all_ids()) ck.arrays[store.name(id)] = store.value(id);
}

void restore_params(nn::ParamStore& store, const Checkpoint& ck, const std::string& prefix) {
    for (const auto& [name, t] : ck.arrays) {
        if (!prefix.empty() && name.rfind(prefix, 0) != 0) continue;
        if (!store.contains(name)) continue;
        nn::Tensor& dst = store.value(store.id_of(name));
        if (!dst.same_shape(t))
            throw IntegrityError("checkpoint: shape mismatch for " + name + " (" + t.shape_str() +
                                 " vs model " + dst.shape_str() + ")");
        dst = t;
    }
}

}  // namespace nlosim::training
