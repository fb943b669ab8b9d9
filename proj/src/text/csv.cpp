#include <fstream>
#include <sstream>
#include <string>

#include "eaxl/error.hpp"
#include "eaxl/text.hpp"

namespace eaxl {

namespace {

constexpr std::string_view kCommaEscape = "_comma_";

std::string unescape(std::string_view field) {
  std::string out;
  out.reserve(field.size());
  std::size_t pos = 0;
  while (pos < field.size()) {
    const auto hit = field.find(kCommaEscape, pos);
    if (hit == std::string_view::npos) {
      out.append(field.substr(pos));
      break;
    }
    out.append(field.substr(pos, hit - pos));
    out.push_back(',');
    pos = hit + kCommaEscape.size();
  }
  return out;
}

std::string escape(std::string_view field) {
  std::string out;
  for (char ch : field) {
    if (ch == ',') {
      out.append(kCommaEscape);
    } else if (ch == '\n' || ch == '\r') {
      out.push_back(' ');
    } else {
      out.push_back(ch);
    }
  }
  return out;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

int parse_int(std::string_view field, std::size_t row, const char* name) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(std::string(field), &used);
    if (used != field.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw DataError("row " + std::to_string(row) + ": field " + name + " is not an integer: '" +
                    std::string(field) + "'");
  }
}

bool is_blank(std::string_view s) {
  return s.find_first_not_of(" \t\r\n") == std::string_view::npos;
}

}  // namespace

CsvParseResult parse_ed_csv(std::string_view bytes, CsvParseOptions options) {
  CsvParseResult result;
  const auto& tax = EmotionTaxonomy::standard();
  std::size_t pos = 0;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (pos < bytes.size()) {
    auto end = bytes.find('\n', pos);
    if (end == std::string_view::npos) end = bytes.size();
    std::string_view line = bytes.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!header_seen) {
      header_seen = true;
      if (line != kEdHeader) {
        throw DataError("row 1: unexpected header '" + std::string(line) + "'");
      }
      continue;
    }
    if (line.empty()) continue;
    try {
      const auto fields = split_fields(line);
      if (fields.size() != 8) {
        throw DataError("row " + std::to_string(line_no) + ": expected 8 fields, found " +
                        std::to_string(fields.size()));
      }
      DialogueRecord r;
      r.conv_id = unescape(fields[0]);
      r.utterance_idx = parse_int(fields[1], line_no, "utterance_idx");
      r.context_emotion = unescape(fields[2]);
      if (!tax.is_fine(r.context_emotion)) {
        throw DataError("row " + std::to_string(line_no) + ": unknown emotion '" +
                        r.context_emotion + "'");
      }
      r.prompt = unescape(fields[3]);
      r.speaker_idx = parse_int(fields[4], line_no, "speaker_idx");
      r.utterance = unescape(fields[5]);
      if (is_blank(r.utterance)) {
        throw DataError("row " + std::to_string(line_no) + ": empty utterance");
      }
      r.selfeval = unescape(fields[6]);
      r.tags = unescape(fields[7]);
      result.records.push_back(std::move(r));
    } catch (const DataError&) {
      if (!options.skip_malformed) throw;
      ++result.skipped;
    }
  }
  if (!header_seen) throw DataError("empty CSV input");
  return result;
}

CsvParseResult read_ed_csv(const std::string& path, CsvParseOptions options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_ed_csv(buf.str(), options);
}

std::string serialize_ed_csv(const std::vector<DialogueRecord>& records) {
  std::string out(kEdHeader);
  out.push_back('\n');
  for (const auto& r : records) {
    out += escape(r.conv_id) + ',' + std::to_string(r.utterance_idx) + ',' +
           escape(r.context_emotion) + ',' + escape(r.prompt) + ',' +
           std::to_string(r.speaker_idx) + ',' + escape(r.utterance) + ',' + escape(r.selfeval) +
           ',' + escape(r.tags) + '\n';
  }
  return out;
}

void write_ed_csv(const std::string& path, const std::vector<DialogueRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << serialize_ed_csv(records);
}

}  // namespace eaxl
