#pragma once

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "vcmqp/error.hpp"
#include "vcmqp/image.hpp"
#include "vcmqp/qpmap.hpp"

namespace vcmqp {

struct EncodeResult {
  Image decoded;
  double bits = 0.0;
  std::string encoder_id;
  std::filesystem::path qpmap_path;
};

/// Standard hybrid-codec quantizer step size: doubles every 6 QP steps.
inline double qp_step(int qp) { return std::exp2((qp - 4) / 6.0); }

/// Deterministic stand-in for a real encoder. Each CTU is quantized
/// independently with its own step size; the rate charge is the zero-order
/// entropy of the CTU's quantization indices (1 bit flat for a constant CTU).
inline EncodeResult mock_encode(const Image& img, const QpMap& map) {
  if (map.grid.image_width != img.width || map.grid.image_height != img.height)
    throw DataError("mock_encode: QP map grid " + std::to_string(map.grid.image_width) + "x" +
                    std::to_string(map.grid.image_height) + " does not match image " +
                    std::to_string(img.width) + "x" + std::to_string(img.height));

  EncodeResult result;
  result.decoded = Image(img.width, img.height);
  result.encoder_id = "mock/1";
  double bits = 0.0;

  for (int k = 0; k < map.grid.ctu_count(); ++k) {
    const Rect cell = map.grid.ctu_rect(k);
    const int x0 = static_cast<int>(cell.x), y0 = static_cast<int>(cell.y);
    const int x1 = x0 + static_cast<int>(cell.w), y1 = y0 + static_cast<int>(cell.h);
    const double step = qp_step(map.qps[static_cast<std::size_t>(k)]);

    std::map<long long, long long> histogram;
    for (int y = y0; y < y1; ++y) {
      for (int x = x0; x < x1; ++x) {
        const long long index = std::llround(img.at(x, y) / step);
        const long long level = std::llround(index * step);
        result.decoded.set(x, y, static_cast<std::uint8_t>(std::clamp(level, 0ll, 255ll)));
        ++histogram[index];
      }
    }

    const long long samples = static_cast<long long>(x1 - x0) * (y1 - y0);
    if (histogram.size() <= 1) {
      bits += 1.0;  // flat cost for a constant CTU
    } else {
      double entropy = 0.0;
      for (const auto& [index, count] : histogram) {
        const double p = static_cast<double>(count) / static_cast<double>(samples);
        entropy -= p * std::log2(p);
      }
      bits += static_cast<double>(samples) * entropy;
    }
  }
  result.bits = bits;
  return result;
}

// --- External encoder adapter -------------------------------------------------
//
// Command template file:
//   encode: <cmdline with {input} {output} {qpmap} {qp_base}>
//   decode: <cmdline with {output} {recon}>
//   bitstream_ext: <ext>            (optional, default "bin")
//
// The QP map is handed over as the sidecar path; translating it into an
// encoder's native per-block format is the job of the wrapped script.

struct CommandTemplate {
  std::string encode_cmd;
  std::string decode_cmd;
  std::string bitstream_ext = "bin";

  static CommandTemplate parse(const std::string& text, const std::string& context) {
    CommandTemplate tpl;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      const auto colon = line.find(':');
      if (colon == std::string::npos)
        throw DataError(context + ": expected \"key: command\" line, got \"" + line + "\"");
      std::string key = line.substr(0, colon);
      std::string value = line.substr(colon + 1);
      value.erase(0, value.find_first_not_of(" \t"));
      if (key == "encode")
        tpl.encode_cmd = value;
      else if (key == "decode")
        tpl.decode_cmd = value;
      else if (key == "bitstream_ext")
        tpl.bitstream_ext = value;
      else
        throw DataError(context + ": unknown template key \"" + key + "\"");
    }
    if (tpl.encode_cmd.empty()) throw DataError(context + ": template misses the encode command");
    if (tpl.decode_cmd.empty()) throw DataError(context + ": template misses the decode command");
    return tpl;
  }

  static CommandTemplate load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str(), path.string());
  }
};

inline std::string substitute_placeholders(std::string cmd,
                                           const std::vector<std::pair<std::string, std::string>>& subs) {
  for (const auto& [key, value] : subs) {
    const std::string token = "{" + key + "}";
    std::size_t pos = 0;
    while ((pos = cmd.find(token, pos)) != std::string::npos) {
      cmd.replace(pos, token.size(), value);
      pos += value.size();
    }
  }
  return cmd;
}

struct CommandResult {
  int exit_code = -1;
  std::string stderr_text;
};

/// Runs a shell command with cwd set to workdir; stdout/stderr go to
/// <tag>.out / <tag>.err inside workdir and stderr is returned for diagnostics.
inline CommandResult run_command(const std::string& cmdline, const std::filesystem::path& workdir,
                                 const std::string& tag) {
  namespace fs = std::filesystem;
  const fs::path out_path = workdir / (tag + ".out");
  const fs::path err_path = workdir / (tag + ".err");

  const pid_t pid = ::fork();
  if (pid < 0) throw ExternalToolError("fork failed for: " + cmdline);
  if (pid == 0) {
    if (::chdir(workdir.c_str()) != 0) _exit(126);
    if (!::freopen(out_path.c_str(), "w", stdout)) _exit(126);
    if (!::freopen(err_path.c_str(), "w", stderr)) _exit(126);
    ::execl("/bin/sh", "sh", "-c", cmdline.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }

  int status = 0;
  if (::waitpid(pid, &status, 0) < 0) throw ExternalToolError("waitpid failed for: " + cmdline);

  CommandResult result;
  if (WIFEXITED(status))
    result.exit_code = WEXITSTATUS(status);
  else if (WIFSIGNALED(status))
    result.exit_code = 128 + WTERMSIG(status);

  std::ifstream err(err_path);
  if (err) {
    std::ostringstream buf;
    buf << err.rdbuf();
    result.stderr_text = buf.str();
  }
  return result;
}

/// Drives an external encode/decode pair through a command template. All
/// temporary files live under workdir; the bitstream size defines the rate.
inline EncodeResult external_encode(const Image& img, const QpMap& map, const CommandTemplate& tpl,
                                    const std::filesystem::path& workdir,
                                    const std::string& image_id = "image") {
  namespace fs = std::filesystem;
  if (map.grid.image_width != img.width || map.grid.image_height != img.height)
    throw DataError("external_encode: QP map grid does not match image dimensions");
  fs::create_directories(workdir);

  const fs::path input = workdir / "input.pgm";
  const fs::path qpmap_path = workdir / "map.qpmap";
  const fs::path bitstream = workdir / ("bitstream." + tpl.bitstream_ext);
  const fs::path recon = workdir / "recon.pgm";
  write_pgm(img, input);
  write_qpmap(map, image_id, qpmap_path);

  int qp_base_hint = kQpMax;
  if (map.qp_base)
    qp_base_hint = *map.qp_base;
  else if (!map.qps.empty())
    qp_base_hint = *std::min_element(map.qps.begin(), map.qps.end());

  const std::vector<std::pair<std::string, std::string>> subs = {
      {"input", input.string()},
      {"output", bitstream.string()},
      {"qpmap", qpmap_path.string()},
      {"recon", recon.string()},
      {"qp_base", std::to_string(qp_base_hint)},
  };

  const std::string encode_cmd = substitute_placeholders(tpl.encode_cmd, subs);
  const CommandResult enc = run_command(encode_cmd, workdir, "encode");
  if (enc.exit_code != 0)
    throw ExternalToolError("encoder exited with status " + std::to_string(enc.exit_code) + ": " +
                                encode_cmd + (enc.stderr_text.empty() ? "" : "\n" + enc.stderr_text),
                            enc.stderr_text);
  if (!fs::exists(bitstream))
    throw ExternalToolError("encoder produced no bitstream at " + bitstream.string());
  const auto size = fs::file_size(bitstream);
  if (size == 0) throw ExternalToolError("encoder produced an empty bitstream at " + bitstream.string());

  const std::string decode_cmd = substitute_placeholders(tpl.decode_cmd, subs);
  const CommandResult dec = run_command(decode_cmd, workdir, "decode");
  if (dec.exit_code != 0)
    throw ExternalToolError("decoder exited with status " + std::to_string(dec.exit_code) + ": " +
                                decode_cmd + (dec.stderr_text.empty() ? "" : "\n" + dec.stderr_text),
                            dec.stderr_text);
  if (!fs::exists(recon))
    throw ExternalToolError("decoder produced no reconstruction at " + recon.string());

  EncodeResult result;
  result.decoded = read_pgm(recon);
  if (result.decoded.width != img.width || result.decoded.height != img.height)
    throw ExternalToolError("reconstruction dimensions differ from the input image");
  result.bits = static_cast<double>(size) * 8.0;
  result.encoder_id = "external";
  result.qpmap_path = qpmap_path;
  return result;
}

}  // namespace vcmqp
