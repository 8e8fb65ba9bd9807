"""Canonical catalog of reported restructuring filings.

Each token is a snake_case ASCII normalisation of one filing category
published by the business register.  The order of ``EVENT_TYPES`` is the
column order of every behaviour feature block, so it must never be
reshuffled; append new categories at the end.
"""

# token -> category label as it appears in register filings
EVENT_CATALOG: dict[str, str] = {
    "corporate_name_change": "Modification of name or corporate name",
    "registered_office_change": "Registered office",
    "social_object_change": "Social object",
    "administrator_change": "Administrator / manager",
    "daily_management_delegate_change": "Daily management delegate",
    "associate_change": "Associate",
    "auditor_change": "Person in charge of checking the accounts",
    "social_capital_change": "Social capital / social funds",
    "managing_director_change": "Managing director / steering committee",
    "duration_change": "Duration",
    "legal_form_change": "Legal form",
    "financial_year_change": "Social exercise",
    "branch_representative_change": "Permanent representative of the branch",
    "merger_demerger": "Merger / demerger",
    "depositary_change": "Depositary",
    "transfer_of_business_assets": "Transfer of business assets",
    "business_sector_change": "Assets or business sectors",
    "address_change": "Address",
    "trading_name_change": "Trading name",
    "activities_change": "Activities",
    "manager_change": "Manager",
    "seat_change": "Seat",
    "reason_change": "Reason",
    "name_change": "Name",
    "chairman_director_change": "Chairman / director",
    "authorized_signatory_change": "Person authorised to manage, administer and sign",
    "commitment_power_change": "Person with the power to commit the company",
    "ministerial_approval": "Ministerial approval",
}

EVENT_TYPES: tuple[str, ...] = tuple(EVENT_CATALOG)

assert len(EVENT_TYPES) == 28


def is_known_event(token: str) -> bool:
    return token in EVENT_CATALOG
