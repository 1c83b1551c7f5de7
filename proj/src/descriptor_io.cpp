#include "cbdb/descriptor_io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cbdb/errors.hpp"

namespace cbdb {

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) {
    const auto b = field.find_first_not_of(" \t\r");
    const auto e = field.find_last_not_of(" \t\r");
    fields.push_back(b == std::string::npos ? "" : field.substr(b, e - b + 1));
  }
  return fields;
}

template <class T>
bool parse_number(const std::string& s, T& out) {
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

}  // namespace

DescriptorBatch read_descriptor_csv(std::istream& in) {
  DescriptorBatch batch;
  std::vector<double> values;
  std::size_t dim = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto fields = split_fields(line);
    int id = 0, cam = 0;
    if (!parse_number(fields[0], id)) {
      if (batch.size() == 0 && values.empty() && line_no == 1) continue;  // header
      throw ConfigError("descriptor csv line " + std::to_string(line_no) + ": bad id");
    }
    if (fields.size() < 3 || !parse_number(fields[1], cam)) {
      throw ConfigError("descriptor csv line " + std::to_string(line_no) +
                        ": need id,camera and at least one value");
    }
    const std::size_t d = fields.size() - 2;
    if (dim == 0) dim = d;
    if (d != dim) {
      throw DimensionError("descriptor csv line " + std::to_string(line_no) + ": " +
                           std::to_string(d) + " values, expected " + std::to_string(dim));
    }
    for (std::size_t i = 2; i < fields.size(); ++i) {
      double v = 0.0;
      if (!parse_number(fields[i], v)) {
        throw ConfigError("descriptor csv line " + std::to_string(line_no) + ": bad value '" +
                          fields[i] + "'");
      }
      values.push_back(v);
    }
    batch.ids.push_back(id);
    batch.cameras.push_back(cam);
  }
  batch.vectors = Tensor({batch.ids.size(), dim}, std::move(values));
  batch.validate();
  return batch;
}

DescriptorBatch read_descriptor_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open descriptor file " + path.string());
  return read_descriptor_csv(in);
}

void write_descriptor_csv(std::ostream& out, const DescriptorBatch& batch) {
  batch.validate();
  const std::size_t d = batch.vectors.dim(1);
  out << "id,camera";
  for (std::size_t k = 0; k < d; ++k) out << ",v" << k;
  out << '\n';
  char buf[32];
  for (std::size_t i = 0; i < batch.size(); ++i) {
    out << batch.ids[i] << ',' << (batch.cameras.empty() ? 0 : batch.cameras[i]);
    for (double v : batch.vectors.row(i)) {
      const auto res = std::to_chars(buf, buf + sizeof(buf), v);
      out << ',' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
    }
    out << '\n';
  }
}

void write_descriptor_csv(const std::filesystem::path& path, const DescriptorBatch& batch) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write descriptor file " + path.string());
  write_descriptor_csv(out, batch);
}

}  // namespace cbdb
