#pragma once

#include <Eigen/Dense>

#include <map>
#include <string>

namespace aime::io {

/// A checkpoint is a directory with params.arr (tensors sorted by name,
/// double precision) and manifest.txt (sorted key=value lines). Both writes
/// are deterministic, so save -> load -> save is byte-identical.
void save_checkpoint(const std::string& dir,
                     const std::map<std::string, Eigen::MatrixXd>& tensors,
                     const std::map<std::string, std::string>& manifest);

struct Checkpoint {
    std::map<std::string, Eigen::MatrixXd> tensors;
    std::map<std::string, std::string> manifest;
};

Checkpoint load_checkpoint(const std::string& dir);

}  // namespace aime::io
