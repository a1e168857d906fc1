#pragma once

#include <cerrno>
#include <cstdio>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include "paregta/encoder.hpp"
#include "paregta/io.hpp"

namespace paregta {

// A sentence encoder behind the wire protocol: request {"id","text"},
// response {"id","vec":[...]}; every response must share one dimension.
class EncoderClient {
public:
    virtual ~EncoderClient() = default;

    VectorXd encode(const std::string& id, const std::string& text) {
        const json resp = round_trip(json{{"id", id}, {"text", text}});
        if (resp.at("id").get<std::string>() != id)
            throw ParseError("external encoder: response id mismatch (sent '" + id + "')");
        const auto& vec = resp.at("vec");
        VectorXd v(static_cast<Eigen::Index>(vec.size()));
        for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = vec.at(i).get<double>();
        if (dim_ < 0) dim_ = static_cast<int>(v.size());
        else if (dim_ != static_cast<int>(v.size()))
            throw ValidationError("external encoder: inconsistent dimensions (" +
                                  std::to_string(dim_) + " vs " + std::to_string(v.size()) +
                                  ")");
        return v;
    }

    int dim() const { return dim_; }

protected:
    virtual json round_trip(const json& request) = 0;

private:
    int dim_ = -1;
};

// Newline-delimited JSON over a child process's stdin/stdout, lockstep
// request/response.
class SubprocessEncoder : public EncoderClient {
public:
    explicit SubprocessEncoder(const std::vector<std::string>& argv) {
        if (argv.empty()) throw ConfigError("subprocess encoder: empty argv");
        int to_child[2], from_child[2];
        if (pipe(to_child) != 0 || pipe(from_child) != 0)
            throw IoError("subprocess encoder: pipe() failed");
        pid_ = fork();
        if (pid_ < 0) throw IoError("subprocess encoder: fork() failed");
        if (pid_ == 0) {
            dup2(to_child[0], STDIN_FILENO);
            dup2(from_child[1], STDOUT_FILENO);
            close(to_child[0]);
            close(to_child[1]);
            close(from_child[0]);
            close(from_child[1]);
            std::vector<char*> cargv;
            for (const auto& a : argv) cargv.push_back(const_cast<char*>(a.c_str()));
            cargv.push_back(nullptr);
            execvp(cargv[0], cargv.data());
            std::fprintf(stderr, "exec %s: %s\n", cargv[0], std::strerror(errno));
            _exit(127);
        }
        close(to_child[0]);
        close(from_child[1]);
        to_child_ = fdopen(to_child[1], "w");
        from_child_ = fdopen(from_child[0], "r");
        if (!to_child_ || !from_child_)
            throw IoError("subprocess encoder: fdopen() failed");
    }

    ~SubprocessEncoder() override {
        if (to_child_) fclose(to_child_);
        if (from_child_) fclose(from_child_);
        if (pid_ > 0) {
            int status = 0;
            waitpid(pid_, &status, 0);
        }
    }

    SubprocessEncoder(const SubprocessEncoder&) = delete;
    SubprocessEncoder& operator=(const SubprocessEncoder&) = delete;

protected:
    json round_trip(const json& request) override {
        const std::string line = request.dump() + "\n";
        if (std::fwrite(line.data(), 1, line.size(), to_child_) != line.size() ||
            std::fflush(to_child_) != 0)
            throw IoError("subprocess encoder: write failed (child exited?)");
        char* buf = nullptr;
        size_t cap = 0;
        const ssize_t n = getline(&buf, &cap, from_child_);
        if (n < 0) {
            free(buf);
            throw IoError("subprocess encoder: child closed the pipe");
        }
        std::string resp(buf, static_cast<size_t>(n));
        free(buf);
        return json::parse(resp);
    }

private:
    pid_t pid_ = -1;
    std::FILE* to_child_ = nullptr;
    std::FILE* from_child_ = nullptr;
};

}  // namespace paregta

// httplib pulls in a lot; keep it at the bottom, after the POSIX bits.
#include <httplib.h>

namespace paregta {

// One JSON object per POST; same request/response shape as the pipe.
class HttpEncoder : public EncoderClient {
public:
    explicit HttpEncoder(const std::string& url) {
        // Split scheme://host:port/path
        const auto scheme_end = url.find("://");
        if (scheme_end == std::string::npos)
            throw ConfigError("http encoder: bad url '" + url + "'");
        const auto path_start = url.find('/', scheme_end + 3);
        const std::string base =
            path_start == std::string::npos ? url : url.substr(0, path_start);
        path_ = path_start == std::string::npos ? "/" : url.substr(path_start);
        client_ = std::make_unique<httplib::Client>(base);
        client_->set_read_timeout(30, 0);
    }

protected:
    json round_trip(const json& request) override {
        auto res = client_->Post(path_, request.dump(), "application/json");
        if (!res)
            throw IoError("http encoder: request failed (" +
                          httplib::to_string(res.error()) + ")");
        if (res->status != 200)
            throw IoError("http encoder: status " + std::to_string(res->status));
        return json::parse(res->body);
    }

private:
    std::unique_ptr<httplib::Client> client_;
    std::string path_;
};

// ---------------------------------------------------------------------------
// Encoder handles: either reference params (binary, magic "PRGP") or an
// external spec (JSON with a "type" field).

struct EncoderHandle {
    std::optional<ReferenceEncoderParams> reference;
    std::shared_ptr<EncoderClient> external;

    Eigen::Index dim() const {
        if (reference) return reference->arch.out_dim;
        return external->dim();
    }

    VectorXd encode_text(const std::string& id, const std::string& text) const {
        if (reference) return paregta::encode(*reference, text);
        return external->encode(id, text);
    }
};

inline bool is_external_spec(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    char magic[4] = {0, 0, 0, 0};
    in.read(magic, 4);
    return std::memcmp(magic, "PRGP", 4) != 0;
}

inline std::shared_ptr<EncoderClient> open_external_encoder(const json& spec) {
    const std::string type = spec.at("type").get<std::string>();
    if (type == "subprocess")
        return std::make_shared<SubprocessEncoder>(
            spec.at("argv").get<std::vector<std::string>>());
    if (type == "http")
        return std::make_shared<HttpEncoder>(spec.at("url").get<std::string>());
    throw ConfigError("external encoder: unknown type '" + type + "'");
}

/// Loads either a reference-params file or an external-encoder spec.
inline EncoderHandle open_encoder(const std::filesystem::path& path) {
    EncoderHandle h;
    if (is_external_spec(path)) {
        h.external = open_external_encoder(read_json(path));
    } else {
        h.reference = load_encoder_params(path);
    }
    return h;
}

}  // namespace paregta
