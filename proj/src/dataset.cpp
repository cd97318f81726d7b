#include "protograde/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "protograde/errors.hpp"
#include "protograde/pgm.hpp"

namespace protograde::dataset {
namespace fs = std::filesystem;
namespace {

const char* const kColumns[] = {"image", "mask", "patient_id", "age", "label"};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string relative_for_manifest(const fs::path& p, const fs::path& dir) {
  if (p.is_absolute() && dir.is_absolute()) {
    const fs::path rel = p.lexically_relative(dir);
    if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
  }
  return p.generic_string();
}

}  // namespace

std::vector<std::string> class_names() { return {kClassNames.begin(), kClassNames.end()}; }

int parse_label(const std::string& name) {
  for (std::size_t c = 0; c < kClassNames.size(); ++c)
    if (name == kClassNames[c]) return static_cast<int>(c);
  throw DataError("unknown label '" + name + "' (expected healthy, early or advanced)");
}

std::vector<BScanRecord> load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  const fs::path dir = fs::absolute(path).parent_path();

  std::string line;
  std::size_t line_no = 0;
  std::map<std::string, std::size_t> column;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) break;
  }
  const auto header = split_csv(line);
  for (std::size_t i = 0; i < header.size(); ++i) column[header[i]] = i;
  for (const char* name : kColumns)
    if (!column.count(name))
      throw DataError(path.string() + " line " + std::to_string(line_no) + ": missing column '" + name + "'");

  std::vector<BScanRecord> records;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::string where = path.string() + " line " + std::to_string(line_no) + ": ";
    const auto cells = split_csv(line);
    if (cells.size() != header.size())
      throw DataError(where + "expected " + std::to_string(header.size()) + " fields, found " +
                      std::to_string(cells.size()));
    auto cell = [&](const char* name) { return cells[column.at(name)]; };

    BScanRecord r;
    try {
      r.label = parse_label(cell("label"));
    } catch (const DataError& e) {
      throw DataError(where + e.what());
    }
    r.patient_id = cell("patient_id");
    if (r.patient_id.empty()) throw DataError(where + "empty patient_id");
    try {
      r.age = parse_number(cell("age"), "age");
    } catch (const std::exception& e) {
      throw DataError(where + e.what());
    }
    if (!std::isfinite(r.age) || r.age < 0.0) throw DataError(where + "age must be a finite non-negative number");
    for (auto [field, target] : {std::pair{"image", &r.image}, std::pair{"mask", &r.mask}}) {
      fs::path p = cell(field);
      if (p.empty()) throw DataError(where + "empty " + field + " path");
      if (p.is_relative()) p = (dir / p).lexically_normal();
      if (!fs::exists(p)) throw DataError(where + field + " file does not exist: " + p.string());
      *target = p;
    }
    records.push_back(std::move(r));
  }
  return records;
}

void write_manifest(const fs::path& path, const std::vector<BScanRecord>& records) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest " + path.string());
  const fs::path dir = fs::absolute(path).parent_path();
  out << "image,mask,patient_id,age,label\n";
  for (const auto& r : records) {
    if (r.label < 0 || static_cast<std::size_t>(r.label) >= kClassNames.size())
      throw DataError("record of patient " + r.patient_id + " has label outside the label set");
    out << relative_for_manifest(r.image, dir) << ',' << relative_for_manifest(r.mask, dir) << ',' << r.patient_id
        << ',' << format_double(r.age) << ',' << kClassNames[static_cast<std::size_t>(r.label)] << "\n";
  }
}

void SplitSpec::validate() const {
  auto in_unit = [](double f) { return f > 0.0 && f < 1.0; };
  if (!in_unit(test_fraction) || !in_unit(val_fraction))
    throw ConfigError("split fractions must lie strictly between 0 and 1");
  if (test_fraction + val_fraction * (1.0 - test_fraction) >= 1.0)
    throw ConfigError("split fractions leave no training data");
}

Split patient_split(const std::vector<BScanRecord>& records, const SplitSpec& spec) {
  spec.validate();
  Split split;
  Rng rng(spec.seed);

  // A patient belongs to the class of its first record.
  std::vector<std::string> patient_order;
  std::map<std::string, std::vector<std::size_t>> by_patient;
  std::map<std::string, int> patient_class;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& id = records[i].patient_id;
    if (!by_patient.count(id)) {
      patient_order.push_back(id);
      patient_class[id] = records[i].label;
    }
    by_patient[id].push_back(i);
  }

  enum Part { kTrain, kVal, kTest };
  std::vector<Part> part(records.size(), kTrain);
  for (std::size_t c = 0; c < kClassNames.size(); ++c) {
    std::vector<std::string> patients;
    std::size_t n = 0;
    for (const auto& id : patient_order)
      if (patient_class[id] == static_cast<int>(c)) {
        patients.push_back(id);
        n += by_patient[id].size();
      }
    if (patients.empty()) throw DataError(std::string("class '") + kClassNames[c] + "' has no patients to split");
    if (patients.size() < 3)
      split.warnings.push_back(std::string("class '") + kClassNames[c] + "' has only " +
                               std::to_string(patients.size()) +
                               " patient(s); its records cannot be spread over all partitions");
    rng.shuffle(std::span<std::string>(patients));

    const auto test_target = static_cast<std::size_t>(std::llround(static_cast<double>(n) * spec.test_fraction));
    const auto val_target = static_cast<std::size_t>(
        std::llround(static_cast<double>(n - std::min(n, test_target)) * spec.val_fraction));
    std::size_t test_count = 0, val_count = 0;
    for (const auto& id : patients) {
      const auto& members = by_patient[id];
      Part p = kTrain;
      if (test_count + members.size() <= test_target) {
        p = kTest;
        test_count += members.size();
      } else if (val_count + members.size() <= val_target) {
        p = kVal;
        val_count += members.size();
      }
      for (auto i : members) part[i] = p;
    }
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto& dst = part[i] == kTrain ? split.train : part[i] == kVal ? split.validation : split.test;
    dst.push_back(records[i]);
  }
  for (const auto& w : split.warnings) std::cerr << "warning: " << w << "\n";
  return split;
}

rnfl::RnflMask load_mask(const fs::path& path) {
  const auto img = pgm::read(path);
  std::vector<std::uint8_t> bits(img.pixels.size());
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = img.pixels[i] >= 128 ? 1 : 0;
  return rnfl::RnflMask(img.height, img.width, std::move(bits));
}

Sample load_sample(const BScanRecord& record, const EncoderConfig& config) {
  const auto img = pgm::read(record.image);
  if (img.height != config.height || img.width != config.width)
    throw DataError(record.image.string() + " is " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                    ", expected " + std::to_string(config.height) + "x" + std::to_string(config.width));
  const auto mask = load_mask(record.mask);
  if (mask.height() != img.height || mask.width() != img.width)
    throw DataError(record.mask.string() + " dimensions differ from its image " + record.image.string());

  const auto grey = pgm::normalized(img);
  const std::size_t ch = config.channels;
  std::vector<double> values(grey.size() * ch);
  for (std::size_t i = 0; i < grey.size(); ++i)
    for (std::size_t k = 0; k < ch; ++k) values[i * ch + k] = grey[i];

  Sample s;
  s.image = Tensor::from({img.height, img.width, ch}, std::move(values));
  s.hand = rnfl::hand_features(mask, record.age, config.bag_edges);
  s.label = record.label;
  s.id = record.image.stem().string();
  return s;
}

std::vector<Sample> load_samples(const std::vector<BScanRecord>& records, const EncoderConfig& config) {
  std::vector<Sample> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(load_sample(r, config));
  return out;
}

}  // namespace protograde::dataset
