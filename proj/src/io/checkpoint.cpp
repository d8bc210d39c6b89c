#include "aime/io/checkpoint.hpp"

#include "aime/io/arrays.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace aime::io {

void save_checkpoint(const std::string& dir,
                     const std::map<std::string, Eigen::MatrixXd>& tensors,
                     const std::map<std::string, std::string>& manifest) {
    std::filesystem::create_directories(dir);
    std::vector<NamedArray> arrays;
    arrays.reserve(tensors.size());
    for (const auto& [name, m] : tensors)  // std::map iterates sorted
        arrays.push_back(from_matrix(name, m, Dtype::F64));
    write_arrays(dir + "/params.arr", arrays);

    std::ofstream os(dir + "/manifest.txt", std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write manifest in " + dir);
    for (const auto& [k, v] : manifest) os << k << "=" << v << "\n";
}

Checkpoint load_checkpoint(const std::string& dir) {
    Checkpoint ckpt;
    for (const auto& a : read_arrays(dir + "/params.arr"))
        ckpt.tensors[a.name] = to_matrix(a);
    std::ifstream is(dir + "/manifest.txt");
    if (!is) throw std::runtime_error("cannot read manifest in " + dir);
    std::string line;
    while (std::getline(is, line)) {
        auto eq = line.find('=');
        if (eq != std::string::npos)
            ckpt.manifest[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return ckpt;
}

}  // namespace aime::io
