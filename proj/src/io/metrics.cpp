#include "aime/io/metrics.hpp"

#include "json.hpp"

#include <fstream>
#include <stdexcept>

namespace aime::io {

using nlohmann::json;

MetricsWriter::MetricsWriter(const std::string& path) : path_(path) {
    std::ofstream os(path_, std::ios::app);
    if (!os) throw std::runtime_error("cannot open metrics log: " + path_);
}

void MetricsWriter::append(const MetricsRow& row) {
    json j = json::object();
    for (const auto& [k, v] : row.tag) j[k] = v;
    for (const auto& [k, v] : row.num) j[k] = v;
    std::ofstream os(path_, std::ios::app);
    if (!os) throw std::runtime_error("cannot append to metrics log: " + path_);
    os << j.dump() << "\n";
}

MetricsLog read_metrics(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read metrics log: " + path);
    MetricsLog log;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            ++log.skipped;
            continue;
        }
        MetricsRow row;
        for (auto it = j.begin(); it != j.end(); ++it) {
            if (it.value().is_number())
                row.num[it.key()] = it.value().get<double>();
            else if (it.value().is_string())
                row.tag[it.key()] = it.value().get<std::string>();
        }
        log.rows.push_back(std::move(row));
    }
    return log;
}

}  // namespace aime::io
