#pragma once

#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

namespace arratia {

inline constexpr int kReportSchemaVersion = 1;

/// Shortest round-trip form with 17 significant digits; "nan", "inf", "-inf" for non-finite values.
std::string format_double(double x);
/// RFC-4180 field: quoted when it holds a comma, quote, CR or LF; quotes doubled.
std::string csv_field(const std::string& s);
void write_csv_row(std::ostream& os, const std::vector<std::string>& fields);

/// JSON number, or a string for non-finite values (JSON has no NaN).
nlohmann::json json_number(double x);

}  // namespace arratia
