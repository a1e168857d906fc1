// Minimal external encoder speaking the wire protocol on stdin/stdout:
// request {"id","text"} per line, response {"id","vec":[...]} per line.
// Deterministic 8-dim output derived from the text hash.

#include <iostream>
#include <string>

#include <json.hpp>

#include "paregta/common.hpp"

int main() {
    std::string line;
    while (std::getline(std::cin, line)) {
        if (line.empty()) continue;
        const auto req = nlohmann::json::parse(line);
        const std::string text = req.at("text").get<std::string>();
        nlohmann::json vec = nlohmann::json::array();
        std::uint64_t h = paregta::fnv1a64(text);
        for (int i = 0; i < 8; ++i) {
            vec.push_back(static_cast<double>(h % 1000) / 1000.0 - 0.5);
            h = paregta::fnv1a64("next", h);
        }
        const nlohmann::json resp{{"id", req.at("id")}, {"vec", vec}};
        std::cout << resp.dump() << "\n" << std::flush;
    }
    return 0;
}
