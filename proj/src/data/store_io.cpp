#include "aime/data/store_io.hpp"

#include "aime/io/arrays.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace aime::data {

namespace {

std::string stem_for(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "ep_%06zu", i);
    return buf;
}

void write_kv(const std::string& path,
              const std::vector<std::pair<std::string, std::string>>& kv) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path);
    for (const auto& [k, v] : kv) os << k << "=" << v << "\n";
}

std::map<std::string, std::string> read_kv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read " + path);
    std::map<std::string, std::string> out;
    std::string line;
    while (std::getline(is, line)) {
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        out[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return out;
}

}  // namespace

void save_store(const EpisodeStore& store, const std::string& dir) {
    fs::create_directories(dir);
    write_kv(dir + "/store.txt", {{"name", store.name()},
                                  {"action_free", store.action_free() ? "1" : "0"}});
    std::ofstream index(dir + "/index.txt", std::ios::trunc);
    if (!index) throw std::runtime_error("cannot write index in " + dir);
    for (std::size_t i = 0; i < store.size(); ++i) {
        const Episode& ep = store.episode(i);
        std::string stem = stem_for(i);
        index << stem << "\n";

        std::vector<io::NamedArray> arrays;
        arrays.push_back(io::from_matrix("observations", ep.observations));
        if (ep.has_actions()) arrays.push_back(io::from_matrix("actions", ep.actions));
        if (ep.has_true_rewards())
            arrays.push_back(io::from_vector("true_rewards", ep.true_rewards));
        if (ep.has_surrogate_rewards())
            arrays.push_back(io::from_vector("surrogate_rewards", ep.surrogate_rewards));
        io::write_arrays(dir + "/" + stem + ".arr", arrays);

        std::vector<std::pair<std::string, std::string>> kv(ep.meta.begin(),
                                                            ep.meta.end());
        kv.emplace_back("schema", "1");
        write_kv(dir + "/" + stem + ".meta", kv);

        if (store.has_oracle_actions(i))
            io::write_arrays(dir + "/" + stem + ".oracle",
                             {io::from_matrix("actions", store.oracle_actions(i))});
    }
}

EpisodeStore load_store(const std::string& dir) {
    auto head = read_kv(dir + "/store.txt");
    EpisodeStore store(head.at("name"), head.at("action_free") == "1");

    std::ifstream index(dir + "/index.txt");
    if (!index) throw std::runtime_error("cannot read index in " + dir);
    std::string stem;
    while (std::getline(index, stem)) {
        if (stem.empty()) continue;
        Episode ep;
        for (const auto& a : io::read_arrays(dir + "/" + stem + ".arr")) {
            if (a.name == "observations") ep.observations = io::to_matrix_f(a);
            else if (a.name == "actions") ep.actions = io::to_matrix_f(a);
            else if (a.name == "true_rewards") ep.true_rewards = io::to_vector_f(a);
            else if (a.name == "surrogate_rewards")
                ep.surrogate_rewards = io::to_vector_f(a);
        }
        for (const auto& [k, v] : read_kv(dir + "/" + stem + ".meta"))
            if (k != "schema") ep.meta[k] = v;
        std::string oracle_path = dir + "/" + stem + ".oracle";
        if (store.action_free() && fs::exists(oracle_path)) {
            auto arrays = io::read_arrays(oracle_path);
            ep.actions = io::to_matrix_f(arrays.at(0));  // re-hidden by append
        }
        store.append(std::move(ep));
    }
    return store;
}

}  // namespace aime::data
