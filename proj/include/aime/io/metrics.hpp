#pragma once

#include <map>
#include <string>
#include <vector>

namespace aime::io {

/// One metrics record: numeric fields plus a few string tags.
struct MetricsRow {
    std::map<std::string, double> num;
    std::map<std::string, std::string> tag;
};

/// Appends line-delimited JSON records so runs can be tailed while training.
class MetricsWriter {
public:
    explicit MetricsWriter(const std::string& path);
    void append(const MetricsRow& row);

private:
    std::string path_;
};

/// Reads a metrics log; malformed lines (including a partial final line from
/// a concurrent writer) are skipped and counted.
struct MetricsLog {
    std::vector<MetricsRow> rows;
    int skipped = 0;
};

MetricsLog read_metrics(const std::string& path);

}  // namespace aime::io
